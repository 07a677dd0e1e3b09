import pytest

from qosoracle import netsim


@pytest.fixture(autouse=True)
def _one_leader_per_term(monkeypatch):
    """Every simulated run in the suite must elect at most one leader per term."""
    original = netsim.Simulation.run

    def checked(self, *args, **kwargs):
        res = original(self, *args, **kwargs)
        assert res.election_violations() == {}, res.election_violations()
        return res

    monkeypatch.setattr(netsim.Simulation, "run", checked)

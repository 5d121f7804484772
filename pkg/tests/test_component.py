import numpy as np
import pytest

from rtcouple.component import (ComponentFinalizedError, ComponentStatus,
                                DuplicateRegistrationError, FieldSpec,
                                NumericalComponent, Registry,
                                UnknownImplementationError)
from rtcouple.meshfield import CELLS, FACES, Field


class Doubler(NumericalComponent):
    """Test double: copies its input scaled by a configured factor."""

    def _initialize(self, config):
        self.factor = float(config.get("factor", 2.0))
        self.n = int(config["n"])
        self._out = Field("out", CELLS, np.zeros((self.n, 1)))
        self.init_count = getattr(self, "init_count", 0) + 1

    def declared_inputs(self):
        return [FieldSpec("inp", CELLS, 1)]

    def declared_outputs(self):
        return [FieldSpec("out", CELLS, 1)]

    def _compute_time_step(self, t, dt):
        src = self._input("inp")
        self._out = Field("out", CELLS, self.factor * src.values,
                          time=t + dt)
        return ComponentStatus(True)

    def _get_output_field(self, name):
        return self._out


def make(config=None):
    c = Doubler()
    c.initialize(config or {"n": 3})
    return c


def test_lifecycle_happy_path():
    c = make()
    c.set_input_field("inp", Field("anything", CELLS, np.ones((3, 1))))
    status = c.compute_time_step(0.0, 1.0)
    assert status.ok
    out = c.get_output_field("out")
    assert np.array_equal(out.values, 2.0 * np.ones((3, 1)))
    c.finalize()
    c.finalize()  # idempotent


def test_set_input_copies_the_field():
    c = make()
    f = Field("inp", CELLS, np.ones((3, 1)))
    c.set_input_field("inp", f)
    f.values[0, 0] = 99.0
    c.compute_time_step(0.0, 1.0)
    assert c.get_output_field("out").values[0, 0] == 2.0


def test_get_output_returns_a_copy():
    c = make()
    c.set_input_field("inp", Field("inp", CELLS, np.ones((3, 1))))
    c.compute_time_step(0.0, 1.0)
    out = c.get_output_field("out")
    out.values[:] = -1.0
    again = c.get_output_field("out")
    assert np.array_equal(again.values, 2.0 * np.ones((3, 1)))


def test_unknown_field_names_rejected():
    c = make()
    with pytest.raises(ValueError, match="nope"):
        c.set_input_field("nope", Field("x", CELLS, np.ones((3, 1))))
    with pytest.raises(ValueError, match="nope"):
        c.get_output_field("nope")


def test_input_shape_and_support_checked():
    c = make()
    with pytest.raises(ValueError, match="expects"):
        c.set_input_field("inp", Field("x", FACES, np.ones((3, 1))))
    with pytest.raises(ValueError, match="expects"):
        c.set_input_field("inp", Field("x", CELLS, np.ones((3, 2))))


def test_missing_input_is_an_error():
    c = make()
    with pytest.raises(RuntimeError, match="inp"):
        c.compute_time_step(0.0, 1.0)


def test_finalized_component_rejects_everything():
    c = make()
    c.finalize()
    with pytest.raises(ComponentFinalizedError):
        c.compute_time_step(0.0, 1.0)
    with pytest.raises(ComponentFinalizedError):
        c.set_input_field("inp", Field("x", CELLS, np.ones((3, 1))))
    with pytest.raises(ComponentFinalizedError):
        c.get_output_field("out")
    with pytest.raises(ComponentFinalizedError):
        c.initialize({"n": 3})


def test_status_requires_message_on_failure():
    with pytest.raises(ValueError):
        ComponentStatus(False)
    s = ComponentStatus(False, "ran out of road", suggested_dt=0.5)
    assert s.suggested_dt == 0.5
    ok = ComponentStatus(True)
    assert ok.message == ""


def test_registry_create_and_listing():
    reg = Registry()
    reg.register("demo", "doubler", Doubler)
    comp = reg.create("demo", "doubler", {"n": 2})
    assert isinstance(comp, Doubler)
    assert comp.init_count == 1  # create() runs initialize
    assert ("demo", "doubler") in reg.available()
    assert reg.available() == sorted(reg.available())


def test_registry_duplicate_and_unknown():
    reg = Registry()
    reg.register("demo", "doubler", Doubler)
    with pytest.raises(DuplicateRegistrationError):
        reg.register("demo", "doubler", Doubler)
    with pytest.raises(UnknownImplementationError) as err:
        reg.create("demo", "missing", {"n": 1})
    # the error names what is actually registered for the application
    assert "doubler" in str(err.value)
    with pytest.raises(UnknownImplementationError):
        reg.create("other-app", "doubler", {"n": 1})


def test_builtin_registry_has_reference_implementations():
    import rtcouple

    pairs = rtcouple.available()
    assert ("flow", "darcy-reference") in pairs
    assert ("transport", "fv-reference") in pairs
    assert ("chemistry", "equilibrium-reference") in pairs
    assert ("chemistry", "identity") in pairs


def test_create_10k_components_and_finalize():
    # lifecycle churn must not leak or corrupt shared state
    reg = Registry()
    reg.register("demo", "doubler", Doubler)
    for k in range(10_000):
        c = reg.create("demo", "doubler", {"n": 1, "factor": float(k)})
        c.set_input_field("inp", Field("i", CELLS, np.ones((1, 1))))
        c.compute_time_step(0.0, 1.0)
        assert c.get_output_field("out").values[0, 0] == float(k)
        c.finalize()

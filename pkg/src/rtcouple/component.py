"""Uniform numerical-component interface and implementation registry.

Every physics solver in the platform is wrapped as a NumericalComponent:
initialize from a config tree, exchange named fields, advance one time
step, finalize.  Coupling drivers talk to components exclusively through
this interface, so any registered implementation of an application can be
swapped for another by name.

Field exchange is by value: set_input_field stores a copy and
get_output_field returns a copy, so callers can never alias component
internals.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .meshfield import Field


class DuplicateRegistrationError(ValueError):
    pass


class UnknownImplementationError(KeyError):
    pass


class ComponentFinalizedError(RuntimeError):
    pass


class ConfigError(ValueError):
    """Component rejected its configuration."""


@dataclass
class ComponentStatus:
    """Outcome of one compute_time_step call.

    A failed step (ok=False) must explain itself and may suggest a smaller
    dt for the driver to retry with.
    """

    ok: bool
    message: str = ""
    suggested_dt: float | None = None

    def __post_init__(self):
        if not self.ok and not self.message:
            raise ValueError("a failed status must carry a message")


class FieldSpec(NamedTuple):
    name: str
    support: str
    n_components: int


class NumericalComponent(abc.ABC):
    """Behavioral contract shared by all numerical components.

    Subclasses implement the underscore hooks; the public methods enforce
    the cross-cutting rules (copy-on-exchange, declared-name checks, and
    rejection of every call except finalize after finalize).
    """

    application: str = ""

    def __init__(self):
        self._finalized = False
        self._inputs: dict[str, Field] = {}

    # -- contract hooks ------------------------------------------------
    @abc.abstractmethod
    def _initialize(self, config: dict) -> None: ...

    @abc.abstractmethod
    def declared_inputs(self) -> list[FieldSpec]: ...

    @abc.abstractmethod
    def declared_outputs(self) -> list[FieldSpec]: ...

    @abc.abstractmethod
    def _compute_time_step(self, t: float, dt: float) -> ComponentStatus: ...

    @abc.abstractmethod
    def _get_output_field(self, name: str) -> Field: ...

    # -- public interface ----------------------------------------------
    def initialize(self, config: dict) -> None:
        self._check_open()
        self._initialize(dict(config))

    def set_input_field(self, name: str, field: Field) -> None:
        self._check_open()
        spec = self._find_spec(name, self.declared_inputs(), "input")
        if field.support != spec.support or field.n_components != spec.n_components:
            raise ValueError(
                f"input {name!r} expects {spec.support} x{spec.n_components}, "
                f"got {field.support} x{field.n_components}")
        self._inputs[name] = field.copy()

    def compute_time_step(self, t: float, dt: float) -> ComponentStatus:
        self._check_open()
        return self._compute_time_step(t, dt)

    def get_output_field(self, name: str) -> Field:
        self._check_open()
        self._find_spec(name, self.declared_outputs(), "output")
        return self._get_output_field(name).copy()

    def finalize(self) -> None:
        self._finalized = True

    # -- helpers --------------------------------------------------------
    def _check_open(self):
        if self._finalized:
            raise ComponentFinalizedError(
                f"{type(self).__name__} has been finalized")

    def _find_spec(self, name, specs, kind) -> FieldSpec:
        for spec in specs:
            if spec.name == name:
                return spec
        known = ", ".join(s.name for s in specs)
        raise ValueError(f"undeclared {kind} field {name!r}; declared: {known}")

    def _input(self, name: str) -> Field:
        if name not in self._inputs:
            raise RuntimeError(f"required input field {name!r} has not been set")
        return self._inputs[name]


class Registry:
    """Maps (application, implementation name) to a component factory."""

    def __init__(self):
        self._factories: dict[tuple[str, str], Callable[[], NumericalComponent]] = {}

    def register(self, application: str, impl_name: str,
                 factory: Callable[[], NumericalComponent]) -> None:
        key = (application, impl_name)
        if key in self._factories:
            raise DuplicateRegistrationError(
                f"({application!r}, {impl_name!r}) already registered")
        self._factories[key] = factory

    def create(self, application: str, impl_name: str,
               config: dict | None = None) -> NumericalComponent:
        key = (application, impl_name)
        if key not in self._factories:
            known = sorted(i for a, i in self._factories if a == application)
            raise UnknownImplementationError(
                f"no implementation {impl_name!r} for application "
                f"{application!r}; registered: {known}")
        comp = self._factories[key]()
        comp.initialize(config or {})
        return comp

    def available(self) -> list[tuple[str, str]]:
        return sorted(self._factories)


registry = Registry()


def register(application: str, impl_name: str, factory) -> None:
    registry.register(application, impl_name, factory)


def create(application: str, impl_name: str, config: dict | None = None) -> NumericalComponent:
    return registry.create(application, impl_name, config)


def available() -> list[tuple[str, str]]:
    return registry.available()

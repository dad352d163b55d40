"""Component-facing simulator abstraction.

Both orchestration backends drive simulators exclusively through four
lifecycle functions: init, create, step, get_data.  A meta description
announces models, parameter names and exchange attributes, deliberately
without type or unit information; values exchanged at runtime are tagged
scalars (float, bool, int) and compliance is the scenario author's problem.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, NamedTuple

from . import models
from .timebase import SimTime, StepSize, check_step, check_time


class SimApiError(Exception):
    """Base class for simulator interface violations."""


class LifecycleError(SimApiError):
    pass


class UnknownModelError(SimApiError):
    pass


class UnknownParamError(SimApiError):
    pass


class UnknownAttributeError(SimApiError):
    pass


class TimeMismatchError(SimApiError):
    pass


@dataclass(frozen=True)
class ModelMeta:
    model_name: str
    params: tuple[str, ...]
    attrs: tuple[str, ...]


@dataclass(frozen=True)
class MetaDescription:
    models: tuple[ModelMeta, ...]

    def __post_init__(self) -> None:
        for m in self.models:
            if len(set(m.attrs)) != len(m.attrs):
                raise SimApiError(f"duplicate attribute names in model {m.model_name!r}")

    def model(self, name: str) -> ModelMeta:
        for m in self.models:
            if m.model_name == name:
                return m
        raise UnknownModelError(f"unknown model {name!r}")

    def attrs(self) -> set[str]:
        out: set[str] = set()
        for m in self.models:
            out.update(m.attrs)
        return out


class EntityId(NamedTuple):
    simulator_id: str
    entity_index: int

    def __str__(self) -> str:
        return f"{self.simulator_id}.{self.entity_index}"


VALUE_TYPES = (float, bool, int)


def check_value(attr: str, value: Any) -> Any:
    if not isinstance(value, VALUE_TYPES):
        raise SimApiError(f"value for {attr!r} must be a tagged scalar (float/bool/int), got {type(value).__name__}")
    return value


class Simulator:
    """Base simulator: enforces the lifecycle contract around subclass hooks.

    Subclasses implement _meta, _create, _step and _get_data; the public
    methods own clock bookkeeping and validation so every backend sees
    identical error behavior.

    A simulator instance is single-threaded; callers serialize access.
    """

    # Where each input attribute is sampled relative to a step: "step_start"
    # for zero-order-hold boundary inputs, "step_end" for signals read at the
    # simulator's decision instant.  Backends consult this when resolving
    # connection data.
    input_sampling: dict[str, str] = {}

    def __init__(self, simulator_id: str) -> None:
        self.simulator_id = simulator_id
        self._initialized = False
        self._clock: SimTime = 0
        self._step_size: StepSize | None = None
        self._entities: list[EntityId] = []
        self._meta_cache: MetaDescription | None = None

    # -- lifecycle -------------------------------------------------------

    def init(self, step_size: StepSize, config: dict | None = None) -> MetaDescription:
        if self._initialized:
            raise LifecycleError(f"{self.simulator_id}: init called twice")
        check_step(step_size)
        self._step_size = step_size
        self._initialized = True
        self._clock = 0
        self._meta_cache = self._meta(config or {})
        return self._meta_cache

    def create(self, model_name: str, params: dict[str, Any] | None = None) -> EntityId:
        self._require_init()
        assert self._meta_cache is not None
        meta = self._meta_cache.model(model_name)
        params = params or {}
        for name in params:
            if name not in meta.params:
                raise UnknownParamError(f"{self.simulator_id}: unknown parameter {name!r} for model {model_name!r}")
        entity = EntityId(self.simulator_id, len(self._entities))
        self._create(model_name, params, entity)
        self._entities.append(entity)
        return entity

    def step(self, t: SimTime, inputs: dict[str, Any] | None = None) -> SimTime:
        self._require_init()
        check_time(t)
        if t != self._clock:
            raise TimeMismatchError(f"{self.simulator_id}: step at t={t} but clock is {self._clock}")
        inputs = inputs or {}
        known = self._input_attrs()
        for attr, value in inputs.items():
            if attr not in known:
                raise UnknownAttributeError(f"{self.simulator_id}: unknown input attribute {attr!r}")
            check_value(attr, value)
        assert self._step_size is not None
        self._step(t, inputs)
        self._clock = t + self._step_size
        return self._clock

    def get_data(self, entity: EntityId, attrs: list[str]) -> dict[str, Any]:
        self._require_init()
        assert self._meta_cache is not None
        if entity not in self._entities:
            raise SimApiError(f"{self.simulator_id}: unknown entity {entity}")
        known = self._meta_cache.attrs()
        for attr in attrs:
            if attr not in known:
                raise UnknownAttributeError(f"{self.simulator_id}: unknown attribute {attr!r}")
        return self._get_data(entity, list(attrs))

    # -- subclass hooks --------------------------------------------------

    def _meta(self, config: dict) -> MetaDescription:
        raise NotImplementedError

    def _create(self, model_name: str, params: dict[str, Any], entity: EntityId) -> None:
        raise NotImplementedError

    def _step(self, t: SimTime, inputs: dict[str, Any]) -> None:
        raise NotImplementedError

    def _get_data(self, entity: EntityId, attrs: list[str]) -> dict[str, Any]:
        raise NotImplementedError

    # -- helpers ---------------------------------------------------------

    @property
    def clock(self) -> SimTime:
        return self._clock

    @property
    def step_size(self) -> StepSize:
        self._require_init()
        assert self._step_size is not None
        return self._step_size

    @property
    def entities(self) -> list[EntityId]:
        return list(self._entities)

    def _require_init(self) -> None:
        if not self._initialized:
            raise LifecycleError(f"{self.simulator_id}: not initialized")

    def _input_attrs(self) -> set[str]:
        assert self._meta_cache is not None
        return self._meta_cache.attrs()


class PlantSimulator(Simulator):
    """Turbine plant wrapped for orchestration.

    Exchange attributes: omega (out), beta_set_in (in); beta, p_wind and
    p_shaft_ratio are exposed read-only for tracing.  The servo-enable input
    is a boundary condition held over the step, so it samples at step start.
    """

    input_sampling = {"beta_set_in": "step_start"}

    PARAM_NAMES = ("rated_speed", "threshold_factor", "gust_start", "gust_ramp",
                   "base_power", "inertia_freq", "damping_ratio", "beta_max",
                   "derate_slope", "servo_rate")

    def __init__(self, simulator_id: str = "plant") -> None:
        super().__init__(simulator_id)
        self._params = models.PlantParams()
        self._state: models.PlantState | None = None

    def _meta(self, config: dict) -> MetaDescription:
        return MetaDescription(models=(
            ModelMeta(
                model_name="Plant",
                params=self.PARAM_NAMES,
                attrs=("omega", "beta", "p_wind", "p_shaft_ratio", "beta_set_in"),
            ),
        ))

    def _create(self, model_name: str, params: dict[str, Any], entity: EntityId) -> None:
        if self._state is not None:
            raise LifecycleError(f"{self.simulator_id}: plant supports a single entity")
        if params:
            self._params = replace(self._params, **params)
        self._state = models.initial_plant_state(self._params)

    def _step(self, t: SimTime, inputs: dict[str, Any]) -> None:
        state = self._require_entity()
        if "beta_set_in" in inputs:
            # Latched: once engaged, the servo stays engaged.
            flag = state.beta_set_in or bool(inputs["beta_set_in"])
            state = replace(state, beta_set_in=flag)
        self._state = models.plant_step(state, self._params, self.step_size)

    def _get_data(self, entity: EntityId, attrs: list[str]) -> dict[str, Any]:
        state = self._require_entity()
        ratio = state.p_shaft / state.p_wind if state.p_wind > 0 else 0.0
        values = {
            "omega": state.omega,
            "beta": state.beta,
            "p_wind": state.p_wind,
            "p_shaft_ratio": ratio,
            "beta_set_in": state.beta_set_in,
        }
        return {a: values[a] for a in attrs}

    def _require_entity(self) -> models.PlantState:
        if self._state is None:
            raise LifecycleError(f"{self.simulator_id}: no entity created")
        return self._state

    @property
    def params(self) -> models.PlantParams:
        return self._params


class ControllerSimulator(Simulator):
    """Discrete pitch controller: latches beta_set once omega_in crosses 110 %.

    The speed input is read at the controller's decision instant, i.e. at the
    end of the step being computed.
    """

    input_sampling = {"omega_in": "step_end"}

    def __init__(self, simulator_id: str = "controller") -> None:
        super().__init__(simulator_id)
        self._threshold = models.THRESHOLD_FACTOR
        self._state: models.ControllerState | None = None

    def _meta(self, config: dict) -> MetaDescription:
        return MetaDescription(models=(
            ModelMeta(model_name="Controller", params=("threshold",), attrs=("omega_in", "beta_set")),
        ))

    def _create(self, model_name: str, params: dict[str, Any], entity: EntityId) -> None:
        if self._state is not None:
            raise LifecycleError(f"{self.simulator_id}: controller supports a single entity")
        self._threshold = float(params.get("threshold", self._threshold))
        self._state = models.ControllerState(t=0, omega_in=0.0, beta_set=False)

    def _step(self, t: SimTime, inputs: dict[str, Any]) -> None:
        state = self._require_entity()
        omega_in = float(inputs.get("omega_in", state.omega_in))
        self._state = models.controller_step(state, omega_in, self.step_size, self._threshold)

    def _get_data(self, entity: EntityId, attrs: list[str]) -> dict[str, Any]:
        state = self._require_entity()
        values = {"omega_in": state.omega_in, "beta_set": state.beta_set}
        return {a: values[a] for a in attrs}

    def _require_entity(self) -> models.ControllerState:
        if self._state is None:
            raise LifecycleError(f"{self.simulator_id}: no entity created")
        return self._state

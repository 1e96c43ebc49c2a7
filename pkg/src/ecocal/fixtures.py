"""Built-in behaviors and reference models.

The flagship model is a closed three-box plankton web: dissolved nutrients,
phytoplankton, and zooplankton exchange matter through explicit flux
variables. Each flux is computed by exactly one owner class; every consumer,
the owner included, integrates with the flux values committed on the
previous step, so the box sum is conserved to rounding regardless of
parameter values.

Rates are per day; behaviors convert the clock's dt from seconds.
"""
from __future__ import annotations

from .kernel import (
    SECONDS_PER_DAY,
    BehaviorContext,
    ClassSpec,
    Model,
    ParameterSpec,
    SimClock,
    VariableSpec,
)


def npz_nutrients(ctx: BehaviorContext) -> None:
    """Dissolved nutrient box: collects recycle, egestion, and mortality,
    pays out phytoplankton uptake."""
    day = ctx.dt / SECONDS_PER_DAY
    n = ctx.get("n")
    uptake = ctx.inquire("Phytoplankton", "uptake")
    recycle = ctx.inquire("Phytoplankton", "recycle")
    egestion = ctx.inquire("Zooplankton", "egestion")
    mortality = ctx.inquire("Zooplankton", "mortality")
    ctx.set("n", n + day * (egestion + mortality + recycle - uptake))


def npz_phytoplankton(ctx: BehaviorContext) -> None:
    """Producer box with saturating nutrient uptake and linear mortality.

    Mortality splits: a gamma share returns to nutrients as recycle, the
    rest sinks to the grazer pool as detritus.
    """
    day = ctx.dt / SECONDS_PER_DAY
    p = ctx.get("biomass")
    n = ctx.inquire("Nutrients", "n")
    grazed = ctx.inquire("Zooplankton", "grazing")
    uptake = ctx.get("uptake")
    recycle = ctx.get("recycle")
    detritus = ctx.get("detritus")
    mumax = ctx.param("mumax")
    kn = ctx.param("kn")
    mp = ctx.param("mp")
    gamma = ctx.param("gamma")
    ctx.set("uptake", mumax * n / (kn + n) * p)
    ctx.set("recycle", gamma * mp * p)
    ctx.set("detritus", (1.0 - gamma) * mp * p)
    ctx.set("biomass", p + day * (uptake - grazed - recycle - detritus))


def npz_zooplankton(ctx: BehaviorContext) -> None:
    """Grazer box: sigmoid functional response, fixed assimilation share,
    linear mortality, detritus subsidy from the producer."""
    day = ctx.dt / SECONDS_PER_DAY
    z = ctx.get("biomass")
    p = ctx.inquire("Phytoplankton", "biomass")
    detritus = ctx.inquire("Phytoplankton", "detritus")
    grazing = ctx.get("grazing")
    mortality = ctx.get("mortality")
    gmax = ctx.param("gmax")
    kp = ctx.param("kp")
    beta = ctx.param("beta")
    mz = ctx.param("mz")
    g_new = gmax * p * p / (kp * kp + p * p) * z
    ctx.set("grazing", g_new)
    ctx.set("egestion", (1.0 - beta) * g_new)
    ctx.set("mortality", mz * z)
    ctx.set("biomass", z + day * (beta * grazing + detritus - mortality))


def forcing_relax(ctx: BehaviorContext) -> None:
    """Relaxes its drive toward a set level and pushes it downstream."""
    day = ctx.dt / SECONDS_PER_DAY
    drive = ctx.get("drive")
    level = ctx.param("level")
    tau = ctx.param("tau")
    nd = drive + (day / tau) * (level - drive)
    ctx.set("drive", nd)
    ctx.update("Biomass", "input", nd)


def logistic_growth(ctx: BehaviorContext) -> None:
    """Logistic growth whose rate is scaled by an externally written input."""
    day = ctx.dt / SECONDS_PER_DAY
    b = ctx.get("biomass")
    inp = ctx.get("input")
    r = ctx.param("r")
    capacity = ctx.param("capacity")
    ctx.set("biomass", b + day * r * inp * b * (1.0 - b / capacity))


BEHAVIORS = {
    "npz-nutrients": npz_nutrients,
    "npz-phytoplankton": npz_phytoplankton,
    "npz-zooplankton": npz_zooplankton,
    "forcing-relax": forcing_relax,
    "logistic-growth": logistic_growth,
}


NPZ_CLOCK = SimClock(t0=0.0, dt=8640.0, horizon=12960000.0)  # 0.1 d steps, 150 d

NPZ_SPECS = (
    ClassSpec(
        name="Nutrients",
        code=1,
        parameters=(),
        variables=(
            VariableSpec("n", initial=2.5, min=0.5, max=6.0, unit="mmol/m3"),
        ),
        behavior=npz_nutrients,
        behavior_name="npz-nutrients",
    ),
    ClassSpec(
        name="Phytoplankton",
        code=2,
        parameters=(
            ParameterSpec("mumax", baseline=0.8, min=0.65, max=1.55, unit="1/d"),
            ParameterSpec("kn", baseline=0.5, min=0.4, max=1.0, unit="mmol/m3"),
            ParameterSpec("mp", baseline=0.1, min=0.08, max=0.2, unit="1/d"),
            ParameterSpec("gamma", baseline=0.7, min=0.2, max=0.8, unit="1"),
        ),
        variables=(
            VariableSpec("biomass", initial=0.4, min=0.05, max=3.0, unit="mmol/m3"),
            VariableSpec("uptake", initial=0.0, unit="mmol/m3/d"),
            VariableSpec("recycle", initial=0.0, unit="mmol/m3/d"),
            VariableSpec("detritus", initial=0.0, unit="mmol/m3/d"),
        ),
        behavior=npz_phytoplankton,
        behavior_name="npz-phytoplankton",
    ),
    ClassSpec(
        name="Zooplankton",
        code=3,
        parameters=(
            ParameterSpec("gmax", baseline=0.3, min=0.25, max=0.4, unit="1/d"),
            ParameterSpec("kp", baseline=0.5, min=0.45, max=0.75, unit="mmol/m3"),
            ParameterSpec("beta", baseline=0.5, min=0.25, max=0.55, unit="1"),
            ParameterSpec("mz", baseline=0.22, min=0.19, max=0.37, unit="1/d"),
        ),
        variables=(
            VariableSpec("biomass", initial=0.25, min=0.05, max=2.0, unit="mmol/m3"),
            VariableSpec("grazing", initial=0.0, unit="mmol/m3/d"),
            VariableSpec("egestion", initial=0.0, unit="mmol/m3/d"),
            VariableSpec("mortality", initial=0.0, unit="mmol/m3/d"),
        ),
        behavior=npz_zooplankton,
        behavior_name="npz-zooplankton",
    ),
)


LOGISTIC_CLOCK = SimClock(t0=0.0, dt=21600.0, horizon=8640000.0)  # 0.25 d steps, 100 d

LOGISTIC_SPECS = (
    ClassSpec(
        name="Forcing",
        code=1,
        parameters=(
            ParameterSpec("level", baseline=1.0, min=0.5, max=3.5, unit="1"),
            ParameterSpec("tau", baseline=4.0, min=2.0, max=14.0, unit="d"),
        ),
        variables=(
            VariableSpec("drive", initial=0.2, min=0.0, max=4.0, unit="1"),
        ),
        behavior=forcing_relax,
        behavior_name="forcing-relax",
    ),
    ClassSpec(
        name="Biomass",
        code=2,
        parameters=(
            ParameterSpec("r", baseline=0.2, min=0.0, max=1.2, unit="1/d"),
            ParameterSpec("capacity", baseline=3.0, min=2.0, max=8.0, unit="mmol/m3"),
        ),
        variables=(
            VariableSpec("biomass", initial=0.3, min=0.1, max=6.0, unit="mmol/m3"),
            VariableSpec("input", initial=0.2, unit="1"),
        ),
        behavior=logistic_growth,
        behavior_name="logistic-growth",
    ),
)


def build_npz_model() -> Model:
    model = Model()
    for spec in NPZ_SPECS:
        model.register_class(spec)
    model.default_clock = NPZ_CLOCK
    return model


def build_logistic_pair() -> Model:
    model = Model()
    for spec in LOGISTIC_SPECS:
        model.register_class(spec)
    model.default_clock = LOGISTIC_CLOCK
    return model

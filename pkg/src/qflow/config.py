"""Run configuration: one TOML document covering a whole pipeline run.

The serializer is canonical (fixed section and key order, shortest
round-trip float formatting), so serialize -> parse -> serialize is
byte-identical and the SHA-256 digest of the canonical form fingerprints a
run.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, replace
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .flow import IntegratorConfig
from .lyapunov import LyapunovConfig
from .qle import SamplingRegion
from .wavepacket import WavepacketSpec


@dataclass(frozen=True)
class RunConfig:
    """Validated contents of a run configuration file."""

    terms: tuple  # rows (re, im, n, l, m)
    spin: Optional[tuple]
    region: tuple  # (x_lo, x_hi, y_lo, y_hi, z_lo, z_hi)
    integrator: IntegratorConfig
    lyapunov: LyapunovConfig
    samples: int
    seed: int
    jobs: int
    out_dir: str
    checkpoint_every: int

    def to_spec(self) -> WavepacketSpec:
        return WavepacketSpec.from_rows(self.terms, spin=self.spin)

    def to_region(self) -> SamplingRegion:
        return SamplingRegion(*self.region)


def default_config() -> RunConfig:
    """The benchmark three-state packet with library defaults."""
    a = 1.0 / (3.0 ** 0.5)
    return RunConfig(
        terms=(
            (a, 0.0, 1, 0, 0),
            (a, 0.0, 2, 0, 0),
            (a, 0.0, 2, 1, 1),
        ),
        spin=None,
        region=(-9.0, 9.0, -6.0, 6.0, -8.0, 8.0),
        integrator=IntegratorConfig(),
        lyapunov=LyapunovConfig(),
        samples=300,
        seed=1,
        jobs=1,
        out_dir="out",
        checkpoint_every=25,
    )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot format {value!r}")


def serialize_config(cfg: RunConfig) -> str:
    """Canonical TOML text for a RunConfig."""
    lines = []
    lines.append("[wavepacket]")
    rows = ", ".join(
        "[" + ", ".join([repr(float(re)), repr(float(im)), str(int(n)), str(int(l)), str(int(m))]) + "]"
        for re, im, n, l, m in cfg.terms
    )
    lines.append(f"terms = [{rows}]")
    if cfg.spin is not None:
        lines.append(
            "spin = [" + ", ".join(repr(float(c)) for c in cfg.spin) + "]"
        )
    lines.append("")
    lines.append("[region]")
    lines.append(f"x = [{_fmt(float(cfg.region[0]))}, {_fmt(float(cfg.region[1]))}]")
    lines.append(f"y = [{_fmt(float(cfg.region[2]))}, {_fmt(float(cfg.region[3]))}]")
    lines.append(f"z = [{_fmt(float(cfg.region[4]))}, {_fmt(float(cfg.region[5]))}]")
    lines.append("")
    lines.append("[integrator]")
    icfg = cfg.integrator
    lines.append(f"rel_tol = {_fmt(icfg.rel_tol)}")
    lines.append(f"abs_tol = {_fmt(icfg.abs_tol)}")
    lines.append(f"initial_step = {_fmt(icfg.initial_step)}")
    lines.append(f"max_step = {_fmt(icfg.max_step)}")
    lines.append(f"max_time = {_fmt(icfg.max_time)}")
    lines.append("")
    lines.append("[lyapunov]")
    lcfg = cfg.lyapunov
    lines.append(f"renorm_interval = {_fmt(lcfg.renorm_interval)}")
    lines.append(f"t1 = {_fmt(lcfg.t1)}")
    lines.append(f"growth = {_fmt(lcfg.growth)}")
    lines.append(f"max_time = {_fmt(lcfg.max_time)}")
    lines.append(f"regular_threshold = {_fmt(lcfg.regular_threshold)}")
    lines.append(f"rmse_fraction = {_fmt(lcfg.rmse_fraction)}")
    lines.append(f"window_start_frac = {_fmt(lcfg.window_start_frac)}")
    lines.append(f"subintervals = {_fmt(lcfg.subintervals)}")
    lines.append("")
    lines.append("[run]")
    lines.append(f"samples = {_fmt(cfg.samples)}")
    lines.append(f"seed = {_fmt(cfg.seed)}")
    lines.append(f"jobs = {_fmt(cfg.jobs)}")
    lines.append(f"out_dir = {_fmt(cfg.out_dir)}")
    lines.append(f"checkpoint_every = {_fmt(cfg.checkpoint_every)}")
    lines.append("")
    return "\n".join(lines)


def parse_config_text(text: str) -> RunConfig:
    """Parse and validate a TOML run configuration."""
    raw = _toml.loads(text)
    base = default_config()
    wp = raw.get("wavepacket", {})
    terms = wp.get("terms")
    if terms is None:
        terms_t = base.terms
    else:
        terms_t = tuple(
            (float(row[0]), float(row[1]), int(row[2]), int(row[3]), int(row[4]))
            for row in terms
        )
    spin = wp.get("spin")
    spin_t = tuple(float(c) for c in spin) if spin is not None else None

    reg = raw.get("region", {})
    if reg:
        region = (
            float(reg["x"][0]),
            float(reg["x"][1]),
            float(reg["y"][0]),
            float(reg["y"][1]),
            float(reg["z"][0]),
            float(reg["z"][1]),
        )
    else:
        region = base.region

    integ = raw.get("integrator", {})
    icfg = IntegratorConfig(
        rel_tol=float(integ.get("rel_tol", base.integrator.rel_tol)),
        abs_tol=float(integ.get("abs_tol", base.integrator.abs_tol)),
        initial_step=float(integ.get("initial_step", base.integrator.initial_step)),
        max_step=float(integ.get("max_step", base.integrator.max_step)),
        max_time=float(integ.get("max_time", base.integrator.max_time)),
    )
    ly = raw.get("lyapunov", {})
    lcfg = LyapunovConfig(
        renorm_interval=float(ly.get("renorm_interval", base.lyapunov.renorm_interval)),
        t1=float(ly.get("t1", base.lyapunov.t1)),
        growth=float(ly.get("growth", base.lyapunov.growth)),
        max_time=float(ly.get("max_time", base.lyapunov.max_time)),
        regular_threshold=float(
            ly.get("regular_threshold", base.lyapunov.regular_threshold)
        ),
        rmse_fraction=float(ly.get("rmse_fraction", base.lyapunov.rmse_fraction)),
        window_start_frac=float(
            ly.get("window_start_frac", base.lyapunov.window_start_frac)
        ),
        subintervals=int(ly.get("subintervals", base.lyapunov.subintervals)),
    )
    run = raw.get("run", {})
    cfg = RunConfig(
        terms=terms_t,
        spin=spin_t,
        region=region,
        integrator=icfg,
        lyapunov=lcfg,
        samples=int(run.get("samples", base.samples)),
        seed=int(run.get("seed", base.seed)),
        jobs=int(run.get("jobs", base.jobs)),
        out_dir=str(run.get("out_dir", base.out_dir)),
        checkpoint_every=int(run.get("checkpoint_every", base.checkpoint_every)),
    )
    cfg.to_spec()  # validates quantum numbers and spin
    cfg.to_region()
    return cfg


def load_config(path) -> RunConfig:
    with open(path, "r") as fh:
        return parse_config_text(fh.read())


def config_digest(cfg: RunConfig) -> str:
    """SHA-256 fingerprint of the canonical serialization."""
    return hashlib.sha256(serialize_config(cfg).encode()).hexdigest()[:16]


def with_overrides(
    cfg: RunConfig,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    out_dir: Optional[str] = None,
    samples: Optional[int] = None,
) -> RunConfig:
    kwargs = {}
    if seed is not None:
        kwargs["seed"] = int(seed)
    if jobs is not None:
        kwargs["jobs"] = int(jobs)
    if out_dir is not None:
        kwargs["out_dir"] = str(out_dir)
    if samples is not None:
        kwargs["samples"] = int(samples)
    return replace(cfg, **kwargs) if kwargs else cfg

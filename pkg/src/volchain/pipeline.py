"""Config-driven orchestration behind the command line."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import MatchingBlock, RunConfig, dump_config
from .generator import GeneratorMatrix, implied_vol, price_vanilla, write_generator_csv
from .grid import StateGrid, build_grid
from .matching import (
    FeasibilityError,
    FeasibilityReport,
    IntensityProfile,
    LatticeCheck,
    auto_region,
    check_lattice_size,
    expected_accrued_variance,
    feasibility_k2,
    feasibility_k3,
    match,
)
from .models import Model
from .montecarlo import McConfig, McSamples, estimate_from_samples, estimate_vanilla, simulate_samples
from .moments import MomentTable, moments
from .spectral import PayoffSpec, SpectralPricer, price

log = logging.getLogger(__name__)


class LatticeError(ValueError):
    pass


@dataclass
class ResolvedMatching:
    block: MatchingBlock
    alpha: float
    region: tuple[float, float]
    report: FeasibilityReport | None
    lattice: LatticeCheck
    profile: IntensityProfile | None = None
    error: str | None = None


@dataclass
class Resolved:
    config: RunConfig
    model: Model
    grid: StateGrid
    generator: GeneratorMatrix
    moments: MomentTable
    expected_variance: float
    blocks: list[ResolvedMatching] = field(default_factory=list)

    @property
    def x0(self) -> int:
        return self.grid.spot_index

    @property
    def problems(self) -> list[str]:
        out = []
        for b in self.blocks:
            if b.error:
                out.append(f"k={b.block.k}: {b.error}")
            if not b.lattice.ok:
                out.append(
                    f"k={b.block.k}: lattice span 2*C*alpha={b.lattice.span:.4g} is below "
                    f"{b.lattice.multiple:g} x expected variance {b.lattice.expected_variance:.4g}"
                )
        return out

    def resolved_config(self) -> RunConfig:
        data = self.config.model_dump()
        data["matching"] = [
            {**b.block.model_dump(), "alpha": b.alpha, "region": list(b.region)} for b in self.blocks
        ]
        return RunConfig.model_validate(data)


def payoff_specs(cfg: RunConfig) -> list[PayoffSpec]:
    corridor = cfg.corridor_spec
    out = []
    for T in cfg.maturities:
        for p in cfg.payoffs:
            rate = cfg.model.rate if p.discount else 0.0
            out.append(PayoffSpec(p.kind, T, p.theta, corridor, rate))
    return out


def resolve(cfg: RunConfig, raise_errors: bool = True) -> Resolved:
    """Build the chain, resolve 'auto' fields, and match intensities for every block."""
    model = cfg.model.build()
    grid = build_grid(cfg.grid.build())
    gen = model.generator(grid)
    table = moments(gen, cfg.corridor_spec, 3)
    horizon = max(cfg.maturities)
    ev = float(expected_accrued_variance(gen, table.M(1), horizon)[grid.spot_index])
    res = Resolved(cfg, model, grid, gen, table, ev)

    for blk in cfg.matching:
        if blk.region == "auto":
            mask = auto_region(gen, grid.spot_index, horizon, cfg.guards.region_mass)
            idx = np.nonzero(mask)[0]
            region = (float(grid.states[idx[0]]), float(grid.states[idx[-1]]))
        else:
            region = (float(blk.region[0]), float(blk.region[1]))

        report = None
        error = None
        if blk.k == 2:
            report = feasibility_k2(table, blk.n, region)
        elif blk.k == 3:
            report = feasibility_k3(table, blk.n, blk.m, region)

        alpha = blk.alpha
        if alpha == "auto":
            if report is None:
                # k=1 has no feasibility constraint: size the lattice from the expected variance
                alpha = cfg.guards.c_multiple * ev / (2 * blk.C)
            else:
                try:
                    alpha = report.choose_alpha()
                except FeasibilityError as exc:
                    error = str(exc)
                    alpha = float("nan")
        lattice = check_lattice_size(alpha, blk.C, ev, cfg.guards.c_multiple)
        rm = ResolvedMatching(blk, float(alpha), region, report, lattice, error=error)
        if error is None:
            try:
                rm.profile = match(table, blk.k, alpha, blk.C, blk.n, blk.m, region)
            except FeasibilityError as exc:
                rm.error = str(exc)
        res.blocks.append(rm)

    if raise_errors:
        for b in res.blocks:
            if b.error:
                rep = b.report
                raise FeasibilityError(f"k={b.block.k}: {b.error}", rep)
        if any(not b.lattice.ok for b in res.blocks):
            raise LatticeError("; ".join(res.problems))
    return res


def validation_summary(res: Resolved) -> list[str]:
    cfg = res.config
    lines = [
        f"config: {cfg.name}",
        f"model: {cfg.model.kind}, grid N={res.grid.size}, spot index {res.x0}",
        f"corridor: [{cfg.corridor_spec.lower}, {cfg.corridor_spec.upper}]",
        f"expected accrued variance at T={max(cfg.maturities):g}: {res.expected_variance:.6g}",
    ]
    for b in res.blocks:
        lines.append(
            f"k={b.block.k}: alpha={b.alpha!r} C={b.block.C} region=[{b.region[0]:.6g}, {b.region[1]:.6g}] "
            f"lattice span {b.lattice.span:.4g} (required {b.lattice.required:.4g}: "
            f"{'ok' if b.lattice.ok else 'FAIL'})"
        )
        if b.report is not None:
            lo, hi = b.report.ratio_extremes()
            lines.append(f"    ratio range on region: [{lo:.6g}, {hi:.6g}]; admissible alpha: {b.report.admissible}")
        if b.error:
            lines.append(f"    ERROR: {b.error}")
    return lines


def mc_config(cfg: RunConfig, threads: int | None = None) -> McConfig:
    if cfg.mc is None:
        raise ValueError("config has no mc block")
    model = cfg.model.build()
    return McConfig(
        diffusion=model.diffusion,
        bernstein=model.bernstein,
        paths=cfg.mc.paths,
        steps_per_year=cfg.mc.steps_per_year,
        seed=cfg.mc.seed,
        s0=model.spot,
        correction_rate=model.correction_rate,
        batch_size=cfg.mc.batch_size,
        threads=threads or cfg.threads,
    )


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _T(t: float) -> str:
    return f"{t:g}"


def write_mc(cfg: RunConfig, samples: McSamples, out: Path) -> dict[tuple[str, float], tuple[float, float]]:
    results = {}
    with open(out / "mc_prices.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["payoff", "T", "mc_price", "mc_stderr", "paths"])
        for p in payoff_specs(cfg):
            est = estimate_from_samples(samples.variance[p.maturity], p)
            results[(p.label, p.maturity)] = (est.value, est.std_error)
            w.writerow([p.label, _T(p.maturity), _fmt(est.value), _fmt(est.std_error), est.paths])
    for T in cfg.maturities:
        samples.to_csv(out / f"mc_samples_T{_T(T)}.csv", T)
    return results


def run_mc(cfg: RunConfig, out_dir: str | Path, threads: int | None = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = simulate_samples(mc_config(cfg, threads), cfg.maturities, cfg.corridor_spec)
    return write_mc(cfg, samples, out)


def run(cfg: RunConfig, out_dir: str | Path, threads: int | None = None, with_mc: bool = True) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = threads or cfg.threads
    res = resolve(cfg)
    dump_config(res.resolved_config(), out / "resolved_config.yaml")
    write_generator_csv(res.generator, out / "generator.csv")
    res.moments.to_csv(out / "moments.csv")

    mc_results = {}
    samples = None
    if with_mc and cfg.mc is not None:
        samples = simulate_samples(mc_config(cfg, threads), cfg.maturities, cfg.corridor_spec)
        mc_results = write_mc(cfg, samples, out)

    rows = []
    for b in res.blocks:
        k = b.block.k
        if b.report is not None:
            b.report.to_csv(out / f"feasibility_k{k}.csv")
        pricer = SpectralPricer(res.generator, b.profile, threads=threads, boundary_tol=cfg.guards.boundary_tol)
        for T in cfg.maturities:
            law = pricer.joint_law(res.x0, T)
            law.to_csv(out / f"law_k{k}_T{_T(T)}.csv")
            for p in payoff_specs(cfg):
                if p.maturity != T:
                    continue
                sp = price(law, p)
                mc = mc_results.get((p.label, T))
                rows.append([p.label, _T(T), k, _fmt(sp), _fmt(mc and mc[0]), _fmt(mc and mc[1]),
                             _fmt(abs(sp - mc[0]) if mc else None)])
        log.info("k=%d priced", k)

    with open(out / "prices.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["payoff", "T", "k", "spectral_price", "mc_price", "mc_stderr", "abs_diff"])
        w.writerows(rows)

    if cfg.vanilla is not None:
        write_vanilla(res, out / "vanilla.csv", samples)
    return out


def write_vanilla(res: Resolved, path: Path, samples: McSamples | None = None) -> None:
    cfg = res.config
    m = res.model
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "K", "strike", "chain_price", "chain_iv", "mc_price", "mc_stderr", "mc_iv"])
        for T in cfg.maturities:
            for K in cfg.vanilla.strikes:
                strike = K * math.exp(m.rate * T) if cfg.vanilla.forward_strikes else K
                p = float(price_vanilla(res.generator, T, strike, m.rate, scale=m.forward_scale(T))[res.x0])
                iv = _safe_iv(p, m.spot, strike, m.rate, T)
                mc_p = mc_se = mc_iv = None
                if samples is not None:
                    est = estimate_vanilla(samples, strike, T, m.rate)
                    mc_p, mc_se = est.value, est.std_error
                    mc_iv = _safe_iv(mc_p, m.spot, strike, m.rate, T)
                w.writerow([_T(T), repr(K), _fmt(strike), _fmt(p), _fmt(iv), _fmt(mc_p), _fmt(mc_se), _fmt(mc_iv)])


def _safe_iv(p, spot, strike, rate, T):
    try:
        return implied_vol(p, spot, strike, rate, T)
    except ValueError:
        return None


def compare(spectral_csv: str | Path, mc_csv: str | Path, out_csv: str | Path) -> int:
    """Join spectral prices with MC prices on (payoff, T); returns the number of joined rows."""
    with open(mc_csv) as fh:
        mc = {(r["payoff"], float(r["T"])): r for r in csv.DictReader(fh)}
    n = 0
    with open(spectral_csv) as fh, open(out_csv, "w", newline="") as oh:
        w = csv.writer(oh)
        w.writerow(["payoff", "T", "k", "spectral_price", "mc_price", "mc_stderr", "abs_diff", "z_score"])
        for r in csv.DictReader(fh):
            m = mc.get((r["payoff"], float(r["T"])))
            if m is None:
                continue
            sp, mp, se = float(r["spectral_price"]), float(m["mc_price"]), float(m["mc_stderr"])
            z = (sp - mp) / se if se > 0 else math.inf
            w.writerow([r["payoff"], r["T"], r["k"], repr(sp), repr(mp), repr(se), repr(abs(sp - mp)), repr(z)])
            n += 1
    return n

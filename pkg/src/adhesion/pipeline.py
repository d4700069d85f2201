"""End-to-end runs: configuration, construction and verification.

A run goes thresholds -> modified flux -> u* -> schedule -> Q -> surgery
stages -> sampled u. When the initial mass never reaches the mixture
densities the run is classical and stops after u*.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import model, pde, verify as V
from .convex.geometry import WallGeometry
from .convex.schedule import Schedule, build_schedule
from .convex.surgery import (BlockSet, StageState, StarEval, SurgeryConfig, sample_solution,
                             surgery_stage)
from .errors import RegimeError

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    """Inputs of one run. Defaults are the reference mixture configuration."""
    alpha: float = 0.75
    beta: float = 0.9
    L: float = 1.0
    M0: float = 0.8
    profile: str = "sin4"
    # flux levels: absolute values win over fractions of [rho(s0+), r*]
    r1: float | None = None
    r2: float | None = None
    r1_fraction: float = 0.0
    r2_fraction: float = 1.0
    Nx: int = 256
    dt: float = 0.25 / 2048
    t_end: float = 0.25
    i_max: int = 3
    epsilon: float = 1.0
    kappa0_fraction: float = 0.5
    coverage_target: float | None = None
    seed: int = 0
    surgery: dict = field(default_factory=dict)
    output_dir: str | None = None
    emit: dict = field(default_factory=lambda: dict(csv=True, svg=True, json=True))
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        model.FluxParams(self.alpha, self.beta)
        pde.Grid(self.L, self.Nx, self.dt, self.t_end)
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        if not (0.0 <= self.r1_fraction < self.r2_fraction <= 1.0):
            raise ValueError("need 0 <= r1_fraction < r2_fraction <= 1")
        known = {f.name for f in fields(SurgeryConfig)}
        bad = set(self.surgery) - known
        if bad:
            raise ValueError(f"unknown surgery keys {sorted(bad)}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config keys {sorted(bad)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def params(self):
        return model.FluxParams(self.alpha, self.beta)

    @property
    def grid(self):
        return pde.Grid(self.L, self.Nx, self.dt, self.t_end)

    def surgery_config(self) -> SurgeryConfig:
        kw = dict(self.surgery)
        kw.setdefault("seed", self.seed)
        if self.coverage_target is not None:
            kw.setdefault("piece_coverage", self.coverage_target)
        return SurgeryConfig(**kw)


def demo_config(**kw) -> RunConfig:
    """The reference mixture run (256 x 2048 grid, three stages)."""
    return RunConfig(**kw)


def quick_config(**kw) -> RunConfig:
    """A coarse two-stage mixture run for smoke tests. Too coarse for the
    residual checks, which need the reference grid."""
    base = dict(Nx=128, dt=0.25 / 512, t_end=0.25, i_max=2)
    base.update(kw)
    return RunConfig(**base)


@dataclass
class Run:
    config: RunConfig
    classical: bool
    sf: pde.StarFields
    u: np.ndarray
    th: model.Thresholds | None = None
    mf: pde.ModifiedFlux | None = None
    schedule: Schedule | None = None
    wall: WallGeometry | None = None
    region: pde.RegionMask | None = None
    star: StarEval | None = None
    state: StageState | None = None
    timings: dict = field(default_factory=dict)

    @property
    def stages(self):
        return [] if self.state is None else self.state.chain()


def _sigma_positive_up_to(p, M0, n=20001):
    s = np.linspace(0.0, M0, n)
    return bool(np.all(model.sigma(p, s)[:-1] > 0.0))


def resolve_levels(cfg: RunConfig, th: model.Thresholds) -> tuple[float, float]:
    lo, hi = th.rho_at_s0_plus, th.r_star
    r1 = cfg.r1 if cfg.r1 is not None else lo + cfg.r1_fraction * (hi - lo)
    r2 = cfg.r2 if cfg.r2 is not None else lo + cfg.r2_fraction * (hi - lo)
    return float(r1), float(r2)


def regime_check(cfg: RunConfig, allow_classical: bool = False):
    """(classical?, thresholds or None). Raises RegimeError with guidance."""
    p = cfg.params
    variant = model.classify(p).variant
    if variant != "FDBDF":
        if _sigma_positive_up_to(p, cfg.M0):
            if allow_classical:
                return True, None
            raise RegimeError(f"{variant} regime with sigma > 0 on [0, M0]: the problem is "
                              "classical; use solve-star (or construct --classical)")
        raise RegimeError(f"mixtures are built only in the FDBDF regime, got {variant}")
    th0 = model.thresholds(p)
    r1, r2 = resolve_levels(cfg, th0)
    th = model.with_levels(p, th0, r1, r2)
    s_lo = model.inverse_branch(p, r1, "minus")
    if cfg.M0 <= s_lo:
        if allow_classical:
            return True, th
        raise RegimeError(f"M0 = {cfg.M0} <= s-(r1) = {s_lo:.6g}: u* stays in the forward "
                          "phase and is the classical solution; use solve-star (or "
                          "construct --classical)")
    return False, th


def solve_classical(cfg: RunConfig, th=None) -> Run:
    t0 = time.perf_counter()
    p, grid = cfg.params, cfg.grid
    u0 = pde.initial_density(dict(M0=cfg.M0, shape=cfg.profile), p, grid)
    thr = None if th is None else model.inverse_branch(p, th.r1, "minus")
    sf = pde.solve_star(p, None, u0, grid, s_threshold=thr)
    return Run(config=cfg, classical=True, sf=sf, u=sf.u_star, th=th,
               timings=dict(solve=time.perf_counter() - t0))


def prepare(cfg: RunConfig, th: model.Thresholds) -> Run:
    """Everything before the surgeries: rho*, u*, schedule, Q."""
    p, grid = cfg.params, cfg.grid
    tm = {}
    t0 = time.perf_counter()
    mf = pde.build_modified_flux(p, th, th.r1, th.r2)
    u0 = pde.initial_density(dict(M0=cfg.M0, shape=cfg.profile), p, grid)
    sf = pde.solve_star(p, mf, u0, grid)
    tm["solve"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    wall = WallGeometry(p, th)
    sch = build_schedule(cfg.i_max, cfg.epsilon, cfg.kappa0_fraction, cfg.seed, wall=wall,
                         L=cfg.L)
    region = pde.detect_Q(sf, th, sch)
    tm["schedule"] = time.perf_counter() - t0
    return Run(config=cfg, classical=False, sf=sf, u=sf.u_star, th=th, mf=mf, schedule=sch,
               wall=wall, region=region, star=StarEval(sf), timings=tm)


def construct(cfg: RunConfig, allow_classical: bool = False) -> Run:
    classical, th = regime_check(cfg, allow_classical)
    if classical:
        return solve_classical(cfg, th)
    run = prepare(cfg, th)
    scfg = cfg.surgery_config()
    state = None
    for i in range(1, cfg.i_max + 1):
        t0 = time.perf_counter()
        state = surgery_stage(state, run.schedule, i, run.wall, run.star, run.region, scfg)
        run.timings[f"stage_{i}"] = time.perf_counter() - t0
    run.state = state
    t0 = time.perf_counter()
    run.u = sample_solution(state, run.star, "cell")
    run.timings["sample"] = time.perf_counter() - t0
    return run


# ------------------------------------------------------------ persistence

BLOCK_FIELDS = ("xc", "tc", "nu", "delta", "tp", "tm", "s_anchor", "r_anchor", "parent",
                "parent_label", "lip_x", "lip_t")


def blocks_to_arrays(b: BlockSet) -> dict:
    return {f: getattr(b, f) for f in BLOCK_FIELDS}


def blocks_from_arrays(d) -> BlockSet:
    return BlockSet(*(np.asarray(d[f]) for f in BLOCK_FIELDS))


def rebuild(cfg: RunConfig, stage_blocks: list, stage_info: list | None = None) -> Run:
    """A run from its config and stored diamonds, without re-packing."""
    classical, th = regime_check(cfg, allow_classical=True)
    if classical:
        return solve_classical(cfg, th)
    run = prepare(cfg, th)
    state = None
    for i, b in enumerate(stage_blocks, start=1):
        info = stage_info[i - 1] if stage_info else dict(stage=i)
        state = StageState(stage=i, blocks=b, prev=state, info=info)
    run.state = state
    run.u = sample_solution(state, run.star, "cell")
    return run


# ------------------------------------------------------------ derived data

def derived_constants(run: Run) -> dict:
    out = dict(classical=run.classical, T0=run.sf.T0)
    p = run.config.params
    out["variant"] = model.classify(p).variant
    if run.th is not None:
        out["thresholds"] = {k: v for k, v in asdict(run.th).items() if k != "extras"}
        out["s_minus_r1"] = model.inverse_branch(p, run.th.r1, "minus")
        out["s_plus_r2"] = model.inverse_branch(p, run.th.r2, "plus")
    sch = run.schedule
    if sch is not None:
        out.update(lambdas=sch.lambdas, lambda_prime=sch.lambda_prime, alpha=sch.alpha_seq,
                   beta=sch.beta_seq, ell0=sch.ell0, kappa0=sch.kappa0, i0=sch.i0,
                   eta=sch.eta, delta=sch.delta, delta_block=sch.delta_block)
    if run.region is not None:
        out["areas"] = run.region.areas
    out["stages"] = [st.info for st in run.stages]
    return json.loads(json.dumps(out, default=V._jsonable))


# ------------------------------------------------------------ verification

def verify_run(run: Run, n_samples: int = 20000, n_zeta: int = 2000, residuals: bool = True,
               u_field: np.ndarray | None = None, u_star_field: np.ndarray | None = None,
               ) -> V.VerificationReport:
    """Hard checks for the stage certification, mass, oscillation and
    residual properties; soft checks report the measured constants.

    ``u_field`` / ``u_star_field`` override the sampled fields (for
    instance with values read back from disk).
    """
    rep = V.VerificationReport()
    sf = run.sf
    L = run.config.L
    u = run.u if u_field is None else np.asarray(u_field)
    u_star = sf.u_star if u_star_field is None else np.asarray(u_star_field)
    grid = sf.grid

    # u* itself
    rep.add("u*: range [0, 1]", max(-u_star.min(), u_star.max() - 1.0, 0.0), 1e-10,
            u_star.min() >= -1e-10 and u_star.max() <= 1 + 1e-10)
    m = np.trapezoid(u_star, grid.x, axis=1)
    rise = float(max(np.max(np.diff(m)), 0.0))
    rep.add("u*: mass nonincreasing", rise, 1e-10 * L, rise <= 1e-10 * L)
    dm = V.mass_compare(u, u_star, grid)
    rep.add("mass: max |int u - int u*|", np.max(np.abs(dm)), 1e-8 * L,
            np.max(np.abs(dm)) <= 1e-8 * L)
    rep.data["mass_u_star"] = m
    if run.classical or run.state is None:
        if run.classical:
            rep.add("classical: u equals u*", np.max(np.abs(u - u_star)), 1e-12,
                    np.max(np.abs(u - u_star)) <= 1e-12)
        return rep

    star, wall, sch, st = run.star, run.wall, run.schedule, run.state
    chain = st.chain()
    tr = pde.truncation_estimate(sf)
    rep.data["stages"] = []
    for c in chain:
        i = c.stage
        b = V.stage_bounds(c, sch)
        inc = V.inclusion_check(c, star, wall, sch, n_samples, seed=i)
        dist = V.inclusion_distance(c, star, wall, sch, n_samples, seed=i) if len(c.blocks) else {}
        rep.add(f"stage {i}: max diameter", b["max_diameter"], b["diam_bound"],
                b["max_diameter"] <= b["diam_bound"])
        rep.add(f"stage {i}: sup |z_i - z_i-1|", b["sup_z"], b["bound"], b["sup_z"] <= b["bound"])
        rep.add(f"stage {i}: sup |v_t change|", b["sup_vt"], b["bound"], b["sup_vt"] <= b["bound"])
        rep.add(f"stage {i}: inclusion fraction", inc["fraction"], 1.0, inc["fraction"] >= 1.0)
        if dist:
            rep.add(f"stage {i}: max dist to K", dist["max"], dist["bound"],
                    dist["max"] <= dist["bound"], hard=False)
        rep.data["stages"].append(dict(stage=i, bounds=b, inclusion=inc, distance=dist,
                                       info=c.info))
    wx = V.w_x_mismatch(st, star, 2000)
    rep.add("max |w_x - v|", wx, 10 * tr, wx <= 10 * tr)
    lip = V.lipschitz_check(st, star, wall, n_samples)
    rep.add("sup |grad z_i| against c1", lip["sup_grad"], lip["c1"], lip["sup_grad"] <= lip["c1"])
    rep.add("u within [0, 1]", max(-u.min(), u.max() - 1.0, 0.0), 1e-12,
            u.min() >= -1e-12 and u.max() <= 1 + 1e-12)

    # oscillation over stage-1 diamonds
    b1 = chain[0].blocks
    if len(b1):
        F = V.ConstructedField(st, star)
        wins = [V.DiamondWindow(*a) for a in zip(b1.xc, b1.tc, b1.nu, b1.delta)]
        osc = V.oscillation_probe(F, wins, n=32)
        target = (1 - 2 * sch.lam_p(1)) * wall.S_m
        rep.add("stage-1 windows: min osc v_x", osc.min(), target, osc.min() >= target,
                note=f"limit bound d0 = {wall.d0:.6g}, gap {wall.d0 - osc.min():.4g}")
        rep.data["oscillation"] = dict(min=float(osc.min()), mean=float(osc.mean()),
                                       target=target, d0=wall.d0)

    # gradient growth and cutoff mass per stage, with the explicit constants
    c2 = 6 * wall.S_M ** 2 / wall.S_m
    c3 = sch.kappa0 * sch.ell0 / 36
    Q = run.region.areas["Q"]
    cut = V.CutoffFn(wall.d0)
    rng = np.random.default_rng(0)
    for c in chain[1:]:
        i = c.stage
        hard = i >= sch.i0
        db = sch.beta(i) - sch.beta(i - 1)
        g = V.gradient_integral(c, star)
        rhs = c2 * (db * Q + run.region.areas["Q_i"][i - 1])
        rep.add(f"stage {i}: int |grad z_i - grad z_i-1|", g, rhs, g <= rhs, hard=hard)
        par = chain[i - 2].blocks
        if len(par) == 0:
            continue
        pick = np.sort(rng.choice(len(par), min(len(par), n_zeta), replace=False))
        D = par.take(pick)
        now = V.zeta_integrals(c, star, cut, wall, D)
        before = V.zeta_integrals(chain[i - 2], star, cut, wall, D)
        low = c3 * db * D.areas[:, None]
        worst = float(np.min(now / low))
        rep.add(f"stage {i}: min int zeta / (c3 dbeta |D|)", worst, 1.0, worst >= 1.0, hard=hard)
        keep = float(np.min((now - (1 - db) * before) / D.areas[:, None]))
        rep.add(f"stage {i}: zeta retention slack per area", keep, -1e-12, keep >= -1e-12,
                hard=hard)
    if chain[1:] and sch.i0 > 2:
        rep.data["lemma_note"] = f"stages below i0 = {sch.i0} are reported, not failed"

    if residuals:
        tfs = V.test_bank(sf.times[-1], L)
        tab = V.residual_table(star, st, sf.params, tfs)
        mx = np.abs(tab).max(axis=1)
        rep.data["residual_table"] = tab
        rep.data["residual_max"] = mx
        dec = bool(np.all(np.diff(mx[1:]) < 0.0))
        rep.add("residual: max |R| strictly decreasing over stages",
                float(np.max(np.diff(mx[1:]))) if mx.size > 2 else 0.0, 0.0, dec)
        ratio = float(mx[-1] / mx[0])
        rep.add("residual: last stage / u*", ratio, 0.5, ratio <= 0.5)

    # u agrees with u* away from the diamonds
    cover = np.zeros(u.shape, dtype=bool)
    X, T = np.meshgrid(sf.grid.x, sf.times)
    xm = np.concatenate([[0.0], 0.5 * (sf.grid.x[:-1] + sf.grid.x[1:]), [L]])
    for c in chain:
        for xs in (xm[:-1], xm[1:], sf.grid.x):
            cover |= c.blocks.locate(np.broadcast_to(xs, X.shape), T) >= 0
    off = ~cover
    diff = float(np.max(np.abs(u - u_star)[off])) if off.any() else 0.0
    rep.add("u equals u* off the diamonds", diff, 1e-12, diff <= 1e-12)
    return rep

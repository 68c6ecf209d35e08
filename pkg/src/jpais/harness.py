"""Monte Carlo experiments: grids, runs, aggregation and CSV output.

Every run ``r`` draws its codes, channels, budgets and packet from
``SeedSequence([seed, r])``, so all algorithms and every grid point that
shares a geometry see the same random draws (common random numbers).
Feedback-channel errors use a separate stream spawned from the same seed.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from itertools import product
from pathlib import Path

import numpy as np

from .adaptive_gpc import gpc_run_packet, run_packet
from .adaptive_ipc import DISTRIBUTED, UPLINK, ipc_run_packet
from .channel import trajectory
from .config import SystemConfig, qpsk_to_bits
from .feedback import bsc_transmit, dequantize, quantize
from .metrics import RunMetrics, empirical_sinr, write_csv
from .mmse import GPC, IPC, PowerAllocation, alternate, filter_statistics, mmse_filter_gpc
from .sigmodel import PacketBatch, link_response, make_scenario, simulate_links

ALGORITHMS = ("JPAIS-GPC", "JPAIS-IPC", "CIS", "NCIS")
MODES = ("mmse", "adaptive")
FEEDBACK = ("auto", "instant", "one-shot")

_JPAIS_MODE = {"JPAIS-GPC": GPC, "JPAIS-IPC": IPC}


def _tuple(x, cast):
    if isinstance(x, str):
        x = [v for v in x.replace(";", ",").split(",") if v.strip()]
    if np.isscalar(x):
        x = [x]
    return tuple(cast(v.strip()) if isinstance(v, str) else cast(v) for v in x)


@dataclass(frozen=True)
class ExperimentSpec:
    """A grid of scenarios and the algorithms to run on each.

    The grid is the Cartesian product of ``snr_db``, ``K``, ``n_r``, ``fdT``
    and ``p_e``. ``modes`` may hold ``"mmse"``, ``"adaptive"`` or both.
    ``block_size`` splits the runs into seed blocks, each giving its own
    CSV row (0 keeps all runs in one block). ``feedback_channel`` routes
    JPAIS allocations through quantization and the binary symmetric
    channel.
    """

    snr_db: tuple = (15.0,)
    K: tuple = (8,)
    n_r: tuple = (2,)
    fdT: tuple = (0.0,)
    p_e: tuple = (0.0,)
    algorithms: tuple = ALGORITHMS
    modes: tuple = ("mmse",)
    runs: int = 200
    seed: int = 0
    block_size: int = 0
    N: int = 16
    L: int = 3
    lam: float = 0.025
    alpha: float = 0.998
    N_tr: int = 200
    P_packet: int = 1500
    sigma2: float = 1.0
    interferer_std_db: float = 3.0
    channel_norm: str = "link"
    iters: int = 2
    n_b: int = 4
    feedback: str = "auto"
    feedback_channel: bool = False
    ipc_mode: str = UPLINK
    cg_variant: str = "tracking"
    batch: int = 25
    workers: int = 1
    name: str = "experiment"
    out_dir: str = "results"
    record_convergence: bool = False

    def __post_init__(self):
        for key, cast in (("snr_db", float), ("K", int), ("n_r", int), ("fdT", float), ("p_e", float)):
            object.__setattr__(self, key, _tuple(getattr(self, key), cast))
        object.__setattr__(self, "algorithms", _tuple(self.algorithms, str))
        object.__setattr__(self, "modes", _tuple(self.modes, str))
        self.validate()

    def validate(self):
        for key in ("snr_db", "K", "n_r", "fdT", "p_e", "algorithms", "modes"):
            if not getattr(self, key):
                raise ValueError(f"grid axis {key!r} is empty")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithm(s) {bad}; choose from {ALGORITHMS}")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown mode(s) {bad}; choose from {MODES}")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.feedback not in FEEDBACK:
            raise ValueError(f"feedback must be one of {FEEDBACK}")
        if self.ipc_mode not in (UPLINK, DISTRIBUTED):
            raise ValueError(f"ipc_mode must be {UPLINK!r} or {DISTRIBUTED!r}")
        if any(not 0 <= p <= 1 for p in self.p_e):
            raise ValueError("p_e values must lie in [0, 1]")
        if self.feedback_channel and "adaptive" in self.modes:
            raise ValueError("feedback errors are simulated in mmse mode only")

    def config(self, K, n_r, snr_db, fdT):
        ref = self.sigma2 if self.sigma2 > 0 else 1.0
        return SystemConfig(
            K=K, N=self.N, L=self.L, n_r=n_r, P_A=ref * 10 ** (snr_db / 10), sigma2=self.sigma2,
            alpha=self.alpha, lam=self.lam, fdT=fdT, P_packet=self.P_packet, N_tr=self.N_tr,
            interferer_std_db=self.interferer_std_db, channel_norm=self.channel_norm,
        )

    def grid(self):
        """Grid points as ``(K, n_r, snr_db, fdT, p_e)`` tuples."""
        return list(product(self.K, self.n_r, self.snr_db, self.fdT, self.p_e))

    def blocks(self):
        size = self.block_size or self.runs
        return [range(s, min(s + size, self.runs)) for s in range(0, self.runs, size)]

    def csv_path(self):
        return Path(self.out_dir) / f"{self.name}.csv"

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            raise ValueError(f"unknown setting(s): {', '.join(unknown)}")
        kw = {}
        for key, value in mapping.items():
            default = known[key].default
            if isinstance(default, bool):
                kw[key] = value if isinstance(value, bool) else str(value).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, tuple):
                kw[key] = value
            elif isinstance(value, str):
                kw[key] = type(default)(value.strip())
            else:
                kw[key] = value
        return cls(**kw)

    def with_overrides(self, **changes):
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def parse_config(text):
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are comma separated."""
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_spec(path, preset=None, **overrides):
    """Spec from an optional preset, then a config file, then keyword overrides."""
    if preset and preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = dict(PRESETS[preset]) if preset else {}
    if path is not None:
        base.update(parse_config(Path(path).read_text(encoding="utf-8")))
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec.from_mapping(base)


#: Named experiments; values are spec settings.
PRESETS = {
    "fig5": dict(
        name="fig5", modes="mmse", snr_db="0,3,6,9,12,15,18", K="4,8,12,16", n_r="1,2",
        algorithms="JPAIS-GPC,JPAIS-IPC,CIS,NCIS",
    ),
    "fig3": dict(
        name="fig3", modes="mmse,adaptive", snr_db="12", K="8", n_r="2",
        algorithms="JPAIS-GPC,JPAIS-IPC,CIS,NCIS", record_convergence=True,
    ),
    "fig6-fdt": dict(
        name="fig6-fdt", modes="mmse", snr_db="15", K="8", n_r="2,4", fdT="0.00001,0.0001,0.001,0.01",
        algorithms="JPAIS-GPC,JPAIS-IPC,CIS", feedback="one-shot", channel_norm="profile",
    ),
    "fig-newfig": dict(
        name="fig-newfig", modes="mmse", snr_db="0,4,8,12,16,20", K="8", n_r="1,2",
        algorithms="JPAIS-GPC,JPAIS-IPC,CIS,NCIS",
    ),
    "fig7": dict(
        name="fig7", modes="mmse", snr_db="15", K="8", n_r="2", p_e="0,0.0001,0.001,0.01,0.1",
        algorithms="JPAIS-GPC,JPAIS-IPC,CIS", feedback_channel=True,
    ),
}

DESK_RUNS = 200
PAPER_RUNS = 1000


# --- single-run building blocks ---------------------------------------------------

def run_rngs(seed, run):
    """Scenario/packet generator and feedback-error generator of one run."""
    ss = np.random.SeedSequence([seed, run])
    main, fb = ss.spawn(2)
    return np.random.default_rng(main), np.random.default_rng(fb)


def transmitted_allocation(alloc, p_e, n_b, rng):
    """Allocation the transmitters apply and the one the receiver assumes.

    The receiver knows the error-free quantized allocation; the
    transmitters see the packet after the binary symmetric channel.
    """
    pkt = quantize(alloc, n_b)
    intended = dequantize(pkt)
    return dequantize(bsc_transmit(pkt, p_e, rng)), intended


def design(scn, algorithm, iters, lr=None):
    """MMSE-mode allocation of one algorithm at the current channel."""
    if algorithm in _JPAIS_MODE:
        _, alloc = alternate(scn, _JPAIS_MODE[algorithm], iters=iters, lr=lr)
        return alloc
    n_p = 1 if algorithm == "NCIS" else scn.cfg.n_p
    return PowerAllocation.equal(scn.budgets, n_p, GPC)


def tracking_filters(scn, taps, allocs, chunk=100):
    """Per-symbol MMSE filters ``(n, n_p M, K)`` along a channel trajectory.

    ``allocs`` is a list of allocations sharing the scenario; the link
    response of each chunk is built once and reused for all of them.
    """
    out = [[] for _ in allocs]
    for s in range(0, len(taps), chunk):
        lr = link_response(scn, taps=taps[s : s + chunk])
        for o, alloc in zip(out, allocs):
            R, P = filter_statistics(lr, alloc.a)
            o.append(np.linalg.solve(R, P))
    return [np.concatenate(o) for o in out]


def _score(y, bits, b, skip):
    ber = float(np.mean(qpsk_to_bits(y)[..., skip:, :, :] != bits[..., skip:, :, :]))
    sinr = float(np.mean(empirical_sinr(y[..., skip:, :], b[..., skip:, :], axis=-2)))
    return ber, sinr


def mmse_run(spec, cfg, run, p_e):
    """One MMSE-mode run of every algorithm. Returns ``{algorithm: (ber, sinr)}``.

    With fading the allocation is designed once from the channel at the
    packet start (one-shot feedback) while the receive filters are re-solved
    for every symbol.
    """
    rng, fb_rng = run_rngs(spec.seed, run)
    scn = make_scenario(cfg, rng)
    taps = trajectory(scn.ch, cfg.fdT, cfg.P_packet) if cfg.fdT > 0 else None
    packet = simulate_links(scn, cfg.P_packet, rng, taps=taps)
    groups = {}
    for alg in spec.algorithms:
        groups.setdefault(alg == "NCIS", []).append(alg)
    out = {}
    for direct, algs in groups.items():
        sc, pk = (scn.direct_only(), packet.direct_only()) if direct else (scn, packet)
        lr = link_response(sc)
        tx, rx = [], []
        for alg in algs:
            alloc = design(sc, alg, spec.iters, lr)
            rx_alloc = alloc
            if spec.feedback_channel and alg in _JPAIS_MODE:
                alloc, rx_alloc = transmitted_allocation(alloc, p_e, spec.n_b, fb_rng)
            tx.append(alloc)
            rx.append(rx_alloc)
        if taps is None:
            filters = [mmse_filter_gpc(*filter_statistics(lr, a.a)) for a in rx]
        else:
            filters = tracking_filters(sc, taps[..., :1, :] if direct else taps, rx)
        for alg, alloc, W in zip(algs, tx, filters):
            r = pk.received(alloc.a)
            y = r @ W.conj() if W.ndim == 2 else np.einsum("nmk,nm->nk", W.conj(), r)
            out[alg] = _score(y, pk.bits, pk.symbols, cfg.N_tr)
    return {alg: out[alg] for alg in spec.algorithms}


def adaptive_block(spec, cfg, runs):
    """Adaptive runs of one block, batched. Returns ``{algorithm: [(ber, sinr), ...]}``
    and, when requested, per-symbol error counts."""
    scns, packets = [], []
    for run in runs:
        rng, _ = run_rngs(spec.seed, run)
        scn = make_scenario(cfg, rng)
        scns.append(scn)
        packets.append(simulate_links(scn, cfg.P_packet, rng, fdT=cfg.fdT))
    batch = PacketBatch.stack(packets)
    mode = "instant" if spec.feedback == "auto" else spec.feedback
    out, curves = {}, {}
    for alg in spec.algorithms:
        sc, bt = scns, batch
        if alg == "NCIS":
            sc = [s.direct_only() for s in scns]
            bt = PacketBatch.stack([p.direct_only() for p in packets])
        res = _adaptive_packet(alg, sc, bt, cfg.replace(n_r=sc[0].cfg.n_r), spec, mode)
        errors = res.bits != bt.bits
        out[alg] = [_score(res.outputs[b], bt.bits[b], bt.symbols[b], cfg.N_tr) for b in range(len(runs))]
        curves[alg] = errors.mean(axis=(2, 3)).sum(axis=0)
    return out, curves


def _adaptive_packet(alg, scns, batch, cfg, spec, mode):
    if alg in ("CIS", "NCIS"):
        return gpc_run_packet(scns, batch, cfg, update_alloc=False, update_channel=False)

    def run(feedback, state=None, bt=batch, c=cfg, **kw):
        if alg == "JPAIS-GPC":
            return gpc_run_packet(scns, bt, c, feedback=feedback, cg_variant=spec.cg_variant, state=state, **kw)
        return ipc_run_packet(scns, bt, c, mode=spec.ipc_mode, feedback=feedback, state=state, **kw)

    if mode == "instant":
        return run("instant")
    # one-shot: equal power during training, then the estimate is sent once
    head = run("packet", bt=batch.slice(0, cfg.N_tr))
    tail = run_packet(
        head.final, batch.slice(cfg.N_tr, batch.n_sym), 0, feedback="packet", tx_alloc=head.final.a.copy(),
        **_run_hooks(alg),
    )
    return _concat(head, tail)


def _run_hooks(alg):
    if alg == "JPAIS-GPC":
        return {}
    from .adaptive_ipc import alloc_regressors, ipc_alloc_update, ipc_channel_update, ipc_filter_update, ipc_output

    return dict(
        filter_update=ipc_filter_update,
        alloc_update=lambda s, r, b: ipc_alloc_update(s, alloc_regressors(s, b), b),
        channel_update=ipc_channel_update,
        output=ipc_output,
        constraint=lambda s: np.max(np.abs(np.sum(np.abs(s.a) ** 2, axis=-1) - s.budgets) / s.budgets),
    )


def _concat(head, tail):
    return replace(
        tail,
        bits=np.concatenate([head.bits, tail.bits], axis=1),
        outputs=np.concatenate([head.outputs, tail.outputs], axis=1),
        alloc=np.concatenate([head.alloc, tail.alloc], axis=1),
        constraint_error=max(head.constraint_error, tail.constraint_error),
    )


# --- orchestration ---------------------------------------------------------------

@dataclass
class ExperimentResult:
    """Aggregated metrics plus optional per-symbol convergence curves."""

    metrics: list
    convergence: dict = field(default_factory=dict)
    csv_path: Path = None

    def rows(self):
        return [m.row() for m in self.metrics]

    def find(self, algorithm, mode="mmse", **point):
        """Merged metrics of one algorithm over all seed blocks of a grid point."""
        hits = [
            m for m in self.metrics
            if m.algorithm == algorithm and m.mode == mode and all(getattr(m, k) == v for k, v in point.items())
        ]
        if not hits:
            raise KeyError(f"no metrics for {algorithm} {mode} {point}")
        out = hits[0]
        for m in hits[1:]:
            out = out.merge(m)
        return out


def _job(args):
    spec, mode, point, block_id, runs = args
    K, n_r, snr, fdT, p_e = point
    cfg = spec.config(K, n_r, snr, fdT)
    per_alg = {alg: [] for alg in spec.algorithms}
    curves = {}
    if mode == "mmse":
        for run in runs:
            for alg, v in mmse_run(spec, cfg, run, p_e).items():
                per_alg[alg].append(v)
    else:
        for s in range(0, len(runs), spec.batch):
            res, cv = adaptive_block(spec, cfg, runs[s : s + spec.batch])
            for alg, v in res.items():
                per_alg[alg].extend(v)
                curves[alg] = curves.get(alg, 0) + cv[alg]
    metrics = []
    for alg in spec.algorithms:
        m = RunMetrics(
            algorithm=alg, mode=mode, K=K, n_r=n_r, snr_db=snr, fdT=fdT, p_e=p_e, seed_block=block_id,
            n_p=1 if alg == "NCIS" else n_r + 1, P_packet=spec.P_packet, N=spec.N, L=spec.L,
        )
        for ber, sinr in per_alg[alg]:
            m.add(ber, sinr)
        metrics.append(m)
    curves = {alg: c / len(runs) for alg, c in curves.items()}
    return metrics, curves


def run_experiment(spec, write=True):
    """Simulate every grid point and mode; write the CSV unless ``write`` is false.

    Jobs are ``(mode, grid point, seed block)`` triples; with
    ``spec.workers > 1`` they run in worker processes. Results do not depend
    on the worker count.
    """
    spec.validate()
    if any(p > 0 for p in spec.p_e) and not spec.feedback_channel:
        raise ValueError("p_e > 0 needs the feedback channel (run_feedback_experiment)")
    jobs = [
        (spec, mode, point, b, list(runs))
        for mode in spec.modes
        for point in spec.grid()
        for b, runs in enumerate(spec.blocks())
    ]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]
    metrics, convergence = [], {}
    for (sp, mode, point, b, runs), (ms, curves) in zip(jobs, results):
        metrics.extend(ms)
        for alg, c in curves.items():
            key = (alg, mode, point)
            prev = convergence.get(key)
            convergence[key] = c * len(runs) if prev is None else prev + c * len(runs)
    convergence = {k: v / spec.runs for k, v in convergence.items()}
    result = ExperimentResult(metrics, convergence)
    if write:
        path = spec.csv_path()
        path.parent.mkdir(parents=True, exist_ok=True)
        write_csv(path, metrics)
        result.csv_path = path
        if spec.record_convergence and convergence:
            write_convergence(path.with_name(path.stem + "_convergence.csv"), convergence)
    return result


def run_feedback_experiment(spec, write=True):
    """Run the grid with JPAIS allocations sent over the noisy feedback channel."""
    return run_experiment(replace(spec, feedback_channel=True), write=write)


def write_convergence(path, convergence, bin_size=50):
    """Per-symbol BER curves, averaged over bins of ``bin_size`` symbols."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "mode", "K", "n_r", "snr_db", "fdT", "symbol", "ber"])
        for (alg, mode, (K, n_r, snr, fdT, _)), curve in sorted(convergence.items(), key=lambda kv: repr(kv[0])):
            for s in range(0, len(curve), bin_size):
                w.writerow([alg, mode, K, n_r, snr, fdT, s + bin_size // 2, repr(float(np.mean(curve[s : s + bin_size])))])

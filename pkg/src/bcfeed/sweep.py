"""SNR sweeps over several schemes and their CSV/JSON serialization.

Every float is written with ``repr`` so a parsed file re-serializes to the
same bytes.  CSV files start with ``# key: <json>`` metadata lines.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

from . import __version__, gbc, kernels
from .channel import GbcConfig, ValidationError
from .gbc import RatePoint, Scheme
from .montecarlo import McEstimate, McPlan, open_batch
from .optimizer import BetaGrid, optimize_beta, rate_at_fixed_beta

CSV_COLUMNS = ("snr_db", "scheme", "rate_bits", "stderr", "samples", "seed",
               "beta_json", "alpha_json")

FIG_AXIS = (-5.0, 34.0, 3.0)

# figure presets: (users, tx, rx, snr reference, schemes)
PRESETS = {
    "fig2a": (2, 2, 1, "total",
              (Scheme.TDMA, Scheme.JSC, Scheme.MAT2, Scheme.UPPER)),
    "fig2b": (2, 2, 1, "total",
              (Scheme.TDMA, Scheme.JSC, Scheme.JSC_FIXED_BETA, Scheme.QMAT, Scheme.UPPER)),
    "fig3a": (3, 3, 1, "per-antenna",
              (Scheme.TDMA, Scheme.JSC, Scheme.UPPER)),
    "fig3b": (3, 3, 1, "per-antenna",
              (Scheme.TDMA, Scheme.JSC, Scheme.JSC_FIXED_BETA, Scheme.QMAT, Scheme.UPPER)),
}


def parse_schemes(text):
    out = []
    for tag in str(text).split(","):
        tag = tag.strip().upper()
        if not tag:
            continue
        try:
            out.append(Scheme(tag))
        except ValueError:
            known = ", ".join(s.value for s in Scheme)
            raise ValidationError(f"unknown scheme {tag!r} (known: {known})") from None
    if not out:
        raise ValidationError("no schemes given")
    return tuple(out)


def snr_axis(start, stop, step):
    """Inclusive dB grid; points are start + i*step rounded to 1e-10."""
    if not step > 0:
        raise ValidationError("snr step must be positive")
    if start > stop:
        raise ValidationError("snr start must not exceed stop")
    n = int(math.floor((stop - start) / step + 1e-9))
    return [round(start + i * step, 10) + 0.0 for i in range(n + 1)]


@dataclass(frozen=True)
class SweepSpec:
    users: int
    tx_antennas: int
    rx_antennas: int
    snr_db: tuple
    schemes: tuple
    plan: McPlan = field(default_factory=McPlan)
    grid: BetaGrid = field(default_factory=BetaGrid)
    snr_ref: str = "per-antenna"
    threads: int = None
    dump_grid: bool = False

    def __post_init__(self):
        if not self.schemes:
            raise ValidationError("schemes must be nonempty")
        if not self.snr_db:
            raise ValidationError("empty SNR axis")
        if self.snr_ref not in ("per-antenna", "total"):
            raise ValidationError(f"unknown SNR reference {self.snr_ref!r}")
        GbcConfig(self.users, self.tx_antennas, self.rx_antennas, 1.0)
        if Scheme.MAT2 in self.schemes and (self.users, self.tx_antennas,
                                            self.rx_antennas) != (2, 2, 1):
            raise ValidationError("MAT2 is defined for K=2, n_t=2, n_r=1 only")

    def config(self, snr_db):
        return GbcConfig.from_db(self.users, self.tx_antennas, self.rx_antennas,
                                 snr_db, self.snr_ref)

    def metadata(self):
        return {
            "version": __version__,
            "backend": kernels.BACKEND,
            "users": self.users,
            "tx_antennas": self.tx_antennas,
            "rx_antennas": self.rx_antennas,
            "snr_ref": self.snr_ref,
            "schemes": [s.value for s in self.schemes],
            "seed": self.plan.seed,
            "samples": self.plan.samples,
            "chunk": self.plan.chunk,
            "grid": self.grid.to_json(),
        }


@dataclass
class SweepOutput:
    metadata: dict
    points: list
    grid_tables: list = None

    # CSV ---------------------------------------------------------------

    def to_csv(self):
        buf = io.StringIO()
        for k, v in self.metadata.items():
            buf.write(f"# {k}: {json.dumps(v)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in self.points:
            w.writerow(_csv_row(p))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        meta = {}
        body = []
        for line in text.splitlines(keepends=True):
            if line.startswith("# "):
                key, _, val = line[2:].rstrip("\n").partition(": ")
                meta[key] = json.loads(val)
            else:
                body.append(line)
        rows = list(csv.reader(body))
        if not rows or tuple(rows[0]) != CSV_COLUMNS:
            raise ValidationError("CSV header does not match the sweep columns")
        return cls(meta, [_point_from_csv(r) for r in rows[1:]])

    # JSON --------------------------------------------------------------

    def to_json(self):
        obj = {"metadata": self.metadata, "rows": [_json_row(p) for p in self.points]}
        if self.grid_tables is not None:
            obj["grid_tables"] = self.grid_tables
        return json.dumps(obj, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        pts = [_point_from_json(r) for r in obj["rows"]]
        return cls(obj["metadata"], pts, obj.get("grid_tables"))


def _fmt(x):
    return repr(float(x))


def _csv_row(p):
    return [_fmt(p.snr_db), p.scheme.value, _fmt(p.rate.mean), _fmt(p.rate.stderr),
            str(p.rate.samples), str(p.rate.seed),
            "" if p.betas is None else json.dumps(list(p.betas)),
            "" if p.alphas is None else json.dumps(list(p.alphas))]


def _point_from_csv(r):
    snr, scheme, mean, se, n, seed, betas, alphas = r
    return RatePoint(float(snr), Scheme(scheme),
                     McEstimate(float(mean), float(se), int(n), int(seed)),
                     tuple(json.loads(betas)) if betas else None,
                     tuple(json.loads(alphas)) if alphas else None)


def _json_row(p):
    return {"snr_db": float(p.snr_db), "scheme": p.scheme.value,
            "rate_bits": float(p.rate.mean), "stderr": float(p.rate.stderr),
            "samples": p.rate.samples, "seed": p.rate.seed,
            "betas": None if p.betas is None else [float(b) for b in p.betas],
            "alphas": None if p.alphas is None else [float(a) for a in p.alphas]}


def _point_from_json(r):
    return RatePoint(r["snr_db"], Scheme(r["scheme"]),
                     McEstimate(r["rate_bits"], r["stderr"], r["samples"], r["seed"]),
                     None if r["betas"] is None else tuple(r["betas"]),
                     None if r["alphas"] is None else tuple(r["alphas"]))


def evaluate_point(spec, snr_db, scheme, batch, grid_tables=None):
    """One RatePoint; schemes at the same SNR share ``batch``."""
    cfg = spec.config(snr_db)
    plan, threads = spec.plan, spec.threads
    if scheme is Scheme.JSC:
        res = optimize_beta(cfg, spec.grid, plan, threads, spec.dump_grid, batch)
        if grid_tables is not None and res.table is not None:
            grid_tables.append({"snr_db": float(snr_db),
                                "points": [{"betas": list(b), "rate_bits": r}
                                           for b, r in res.table]})
        return RatePoint(snr_db, scheme, res.best_rate, res.best_betas, res.alphas)
    if scheme is Scheme.JSC_FIXED_BETA:
        pt = rate_at_fixed_beta(cfg, gbc.fixed_betas(cfg.users), plan, batch, threads)
        return replace(pt, snr_db=snr_db)
    fn = {Scheme.TDMA: gbc.tdma_rate, Scheme.MAT2: gbc.mat2_rate,
          Scheme.QMAT: gbc.qmat_rate, Scheme.UPPER: gbc.upper_bound}[scheme]
    return RatePoint(snr_db, scheme, fn(cfg, plan, batch, threads))


def run_sweep(spec):
    """Evaluate every (SNR, scheme) pair in increasing SNR order."""
    points = []
    tables = [] if spec.dump_grid else None
    # draws depend only on the dimensions, so one batch serves every SNR
    batch = open_batch(spec.plan, spec.config(spec.snr_db[0]))
    for snr_db in spec.snr_db:
        for scheme in spec.schemes:
            points.append(evaluate_point(spec, snr_db, scheme, batch, tables))
    return SweepOutput(spec.metadata(), points, tables)

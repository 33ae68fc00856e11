"""Reconstruction scores over withheld pixels: RMSLE and MRE.

Fields are stored in log10 units, so RMSLE is a plain masked RMSE of stored
values, and MRE exponentiates back to linear units first. Both metrics also
accept linear-unit inputs; the two routes agree to near machine precision.
"""

import csv
import os
from dataclasses import dataclass, asdict

import numpy as np

REPORT_COLUMNS = ["method", "mask_spec", "rmsle", "mre_percent",
                  "mv_prop", "n_pixels", "seed"]


@dataclass
class EvalReport:
    method: str
    mask_spec: str
    rmsle: float
    mre_percent: float
    mv_prop: float
    n_pixels: int
    seed: int

    def row(self):
        d = asdict(self)
        return [_fmt(d[c]) for c in REPORT_COLUMNS]


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _domain_values(truth, recon, domain):
    domain = np.asarray(domain, dtype=bool)
    if not domain.any():
        raise ValueError("empty evaluation domain")
    t = np.asarray(truth, dtype=np.float64)[domain]
    r = np.asarray(recon, dtype=np.float64)[domain]
    if np.any(~np.isfinite(t)) or np.any(~np.isfinite(r)):
        raise ValueError("non-finite value inside evaluation domain")
    return t, r


def rmsle(truth, recon, domain, assume_log10=True):
    """Root mean squared difference of common logs over the domain."""
    t, r = _domain_values(truth, recon, domain)
    if not assume_log10:
        if np.any(t <= 0) or np.any(r <= 0):
            raise ValueError("non-positive linear value in evaluation domain")
        t = np.log10(t)
        r = np.log10(r)
    return float(np.sqrt(np.mean((t - r) ** 2)))


def mre(truth, recon, domain, assume_log10=True):
    """Mean |truth - recon| / truth in percent, in linear units."""
    t, r = _domain_values(truth, recon, domain)
    if assume_log10:
        t = np.power(10.0, t)
        r = np.power(10.0, r)
    if np.any(t == 0):
        raise ValueError("zero truth value in evaluation domain")
    return float(np.mean(100.0 * np.abs((t - r) / t)))


def evaluate(truth_field, recon_field, obs_mask, method="", mask_spec="", seed=0):
    """Score a reconstruction on valid-but-withheld pixels.

    mv_prop reports the missing-value proportion of the observations that the
    method actually saw (missing = not kept, over sea pixels).
    """
    keep = obs_mask.keep
    domain = truth_field.valid_mask & ~keep
    sea = ~truth_field.land_mask
    n_sea = int(sea.sum()) * truth_field.n_frames
    mv_prop = 1.0 - float(keep.sum()) / n_sea
    return EvalReport(
        method=method,
        mask_spec=mask_spec,
        rmsle=rmsle(truth_field.values, recon_field.values, domain),
        mre_percent=mre(truth_field.values, recon_field.values, domain),
        mv_prop=mv_prop,
        n_pixels=int(domain.sum()),
        seed=int(seed),
    )


def append_report(path, report):
    """Append one CSV row, writing the header on first use; one atomic write."""
    line = ",".join(report.row()) + "\n"
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        line = ",".join(REPORT_COLUMNS) + "\n" + line
    with open(path, "a", newline="") as fh:
        fh.write(line)
        fh.flush()


def read_reports(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

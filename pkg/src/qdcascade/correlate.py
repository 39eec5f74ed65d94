"""Streaming coincidence analysis of time-tag streams.

Cross-correlation histograms g2(tau), pulsed/cw normalization, and
coincidence-count tables feeding the tomography and fidelity chain.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import polarization as pol
from .errors import EstimationError, InvalidInputError
from .pttg import TagStream


@dataclass
class Histogram:
    """Cross-correlation histogram of tau = t_b - t_a between two channels."""

    bin_width_ps: int
    tau_min_ps: int
    tau_max_ps: int
    counts: np.ndarray
    channel_a: int
    channel_b: int
    singles_a: int = 0
    singles_b: int = 0
    acquisition_ps: int = 0

    @property
    def bin_edges(self) -> np.ndarray:
        return self.tau_min_ps + self.bin_width_ps * np.arange(len(self.counts) + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        return self.bin_edges[:-1] + 0.5 * self.bin_width_ps

    def merged_with(self, other: "Histogram") -> "Histogram":
        if (self.bin_width_ps, self.tau_min_ps, self.tau_max_ps) != \
                (other.bin_width_ps, other.tau_min_ps, other.tau_max_ps):
            raise InvalidInputError("cannot merge histograms with different binning")
        return Histogram(self.bin_width_ps, self.tau_min_ps, self.tau_max_ps,
                         self.counts + other.counts, self.channel_a, self.channel_b,
                         self.singles_a + other.singles_a,
                         self.singles_b + other.singles_b,
                         max(self.acquisition_ps, other.acquisition_ps))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["tau_ps", "counts"])
        for tau, n in zip(self.bin_centers, self.counts):
            w.writerow([int(tau) if float(tau).is_integer() else tau, int(n)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "bin_width_ps": self.bin_width_ps,
            "tau_min_ps": self.tau_min_ps,
            "tau_max_ps": self.tau_max_ps,
            "channel_a": self.channel_a,
            "channel_b": self.channel_b,
            "singles_a": self.singles_a,
            "singles_b": self.singles_b,
            "acquisition_ps": self.acquisition_ps,
            "counts": self.counts.tolist(),
        }, indent=2)


def _num_bins(bin_width_ps, tau_min_ps, tau_max_ps):
    span = tau_max_ps - tau_min_ps
    if span <= 0:
        raise InvalidInputError("tau range must have tau_max > tau_min")
    if span % bin_width_ps:
        raise InvalidInputError("tau range must be an integer number of bins")
    return span // bin_width_ps


def cross_correlate(stream: TagStream, ch_a: int, ch_b: int,
                    bin_width_ps: int, tau_range_ps) -> Histogram:
    """Histogram all tag pairs with tau = t_b - t_a inside the range.

    Single pass over the sorted stream with a sliding window; equivalent to
    brute-force all-pairs counting.
    """
    if bin_width_ps <= 0:
        raise InvalidInputError("bin width must be > 0")
    tau_min, tau_max = int(tau_range_ps[0]), int(tau_range_ps[1])
    nbins = _num_bins(bin_width_ps, tau_min, tau_max)
    if not stream.is_sorted():
        raise InvalidInputError("tag stream must be timestamp-sorted")

    ta = stream.channel_times(ch_a)
    tb = stream.channel_times(ch_b)
    counts = np.zeros(nbins, dtype=np.int64)
    if len(ta) and len(tb):
        # sliding window via binary search on the sorted partner channel:
        # each a-tag sees exactly the b-tags with tau in [tau_min, tau_max)
        lo = np.searchsorted(tb, ta + tau_min, side="left")
        hi = np.searchsorted(tb, ta + tau_max, side="left")
        npairs = hi - lo
        keep = npairs > 0
        if keep.any():
            idx_a = np.repeat(np.nonzero(keep)[0], npairs[keep])
            offsets = np.concatenate([np.arange(lo[i], hi[i]) for i in np.nonzero(keep)[0]]) \
                if npairs[keep].sum() < 1 << 26 else None
            if offsets is None:
                raise InvalidInputError("tau range too wide for this stream size")
            taus = tb[offsets] - ta[idx_a]
            bins = (taus - tau_min) // bin_width_ps
            np.add.at(counts, bins, 1)
    acq = int(stream.timestamps[-1]) - int(stream.timestamps[0]) if len(stream) else 0
    return Histogram(bin_width_ps, tau_min, tau_max, counts, ch_a, ch_b,
                     singles_a=len(ta), singles_b=len(tb), acquisition_ps=acq)


def cross_correlate_sharded(stream: TagStream, ch_a: int, ch_b: int,
                            bin_width_ps: int, tau_range_ps, n_shards: int) -> Histogram:
    """Shard the a-tags by time range and merge partial histograms.

    Each shard correlates its a-tags against the full b-channel, so pairs
    spanning a shard boundary are carried correctly; the merged result is
    identical to the single-pass histogram.
    """
    if n_shards < 1:
        raise InvalidInputError("n_shards must be >= 1")
    if not stream.is_sorted():
        raise InvalidInputError("tag stream must be timestamp-sorted")
    tau_min, tau_max = int(tau_range_ps[0]), int(tau_range_ps[1])
    nbins = _num_bins(bin_width_ps, tau_min, tau_max)

    ta = stream.channel_times(ch_a)
    tb = stream.channel_times(ch_b)
    total = Histogram(bin_width_ps, tau_min, tau_max, np.zeros(nbins, dtype=np.int64),
                      ch_a, ch_b, singles_a=len(ta), singles_b=len(tb),
                      acquisition_ps=int(stream.timestamps[-1]) - int(stream.timestamps[0])
                      if len(stream) else 0)
    bounds = np.linspace(0, len(ta), n_shards + 1).astype(int)
    for s in range(n_shards):
        part = ta[bounds[s]:bounds[s + 1]]
        if not len(part):
            continue
        lo = np.searchsorted(tb, part + tau_min, side="left")
        hi = np.searchsorted(tb, part + tau_max, side="left")
        npairs = hi - lo
        keep = np.nonzero(npairs > 0)[0]
        if len(keep):
            idx_a = np.repeat(keep, npairs[keep])
            offsets = np.concatenate([np.arange(lo[i], hi[i]) for i in keep])
            taus = tb[offsets] - part[idx_a]
            bins = (taus - tau_min) // bin_width_ps
            np.add.at(total.counts, bins, 1)
    return total


@dataclass
class G2Curve:
    """Normalized second-order correlation: per bin (cw) or per peak (pulsed)."""

    mode: str
    tau_ps: np.ndarray
    g2: np.ndarray


def normalize_g2(hist: Histogram, mode: str, rep_period_ps: int | None = None,
                 n_side_peaks: int = 5) -> G2Curve:
    """Normalize a raw correlation histogram.

    cw: divide by the uncorrelated-rate expectation r_a * r_b * bin * T.
    pulsed: integrate each repetition-period peak and divide by the mean of
    the side-peak areas (>= n_side_peaks side peaks required).
    """
    if mode == "cw":
        if hist.singles_a == 0 or hist.singles_b == 0 or hist.acquisition_ps == 0:
            raise EstimationError("cw normalization needs nonzero singles and acquisition time")
        t = hist.acquisition_ps
        expected = (hist.singles_a / t) * (hist.singles_b / t) * hist.bin_width_ps * t
        return G2Curve("cw", hist.bin_centers, hist.counts / expected)
    if mode != "pulsed":
        raise InvalidInputError(f"unknown normalization mode {mode!r}")
    if not rep_period_ps or rep_period_ps <= 0:
        raise InvalidInputError("pulsed normalization needs the repetition period")

    centers = hist.bin_centers
    k_min = int(np.ceil((hist.tau_min_ps + rep_period_ps / 2) / rep_period_ps))
    k_max = int(np.floor((hist.tau_max_ps - rep_period_ps / 2) / rep_period_ps))
    peaks, areas = [], []
    for k in range(k_min, k_max + 1):
        center = k * rep_period_ps
        sel = (centers >= center - rep_period_ps / 2) & (centers < center + rep_period_ps / 2)
        peaks.append(center)
        areas.append(hist.counts[sel].sum())
    peaks = np.array(peaks)
    areas = np.array(areas, dtype=float)
    side = areas[peaks != 0]
    if len(side) < n_side_peaks:
        raise EstimationError(
            f"pulsed normalization needs >= {n_side_peaks} side peaks, have {len(side)}")
    ref = side.mean()
    if ref == 0:
        raise EstimationError("all side peaks are empty; cannot normalize")
    return G2Curve("pulsed", peaks, areas / ref)


@dataclass
class CountsTable:
    """Coincidence counts per (XX-analyzer, X-analyzer) outcome pair."""

    entries: dict
    window_ps: int = 0
    ambiguous_matches: int = 0
    metadata: dict = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.entries.values())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["xx_outcome", "x_outcome", "count"])
        for (a, b), n in sorted(self.entries.items()):
            w.writerow([a, b, n])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({
            "window_ps": self.window_ps,
            "ambiguous_matches": self.ambiguous_matches,
            "metadata": self.metadata,
            "entries": [{"xx": a, "x": b, "count": n}
                        for (a, b), n in sorted(self.entries.items())],
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "CountsTable":
        try:
            doc = json.loads(text)
            entries = {(e["xx"], e["x"]): int(e["count"]) for e in doc["entries"]}
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"malformed counts-table JSON: {exc}") from exc
        return cls(entries, window_ps=doc.get("window_ps", 0),
                   ambiguous_matches=doc.get("ambiguous_matches", 0),
                   metadata=doc.get("metadata", {}))

    @classmethod
    def from_csv(cls, text: str, window_ps: int = 0) -> "CountsTable":
        entries = {}
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["xx_outcome", "x_outcome", "count"]:
            raise InvalidInputError("counts CSV must start with header xx_outcome,x_outcome,count")
        for row in reader:
            if not row:
                continue
            a, b, n = row[0].strip(), row[1].strip(), int(row[2])
            if n < 0:
                raise InvalidInputError("counts must be >= 0")
            entries[(a, b)] = entries.get((a, b), 0) + n
        return cls(entries, window_ps=window_ps)


def match_coincidences(ta: np.ndarray, tb: np.ndarray, window_ps: int):
    """Greedy earliest-pair matching of two sorted tag sequences.

    Returns (n_matched, n_ambiguous) where an ambiguous match is one whose
    a- or b-tag had more than one partner inside the window.
    """
    i = j = 0
    matched = ambiguous = 0
    na, nb = len(ta), len(tb)
    while i < na and j < nb:
        d = int(tb[j]) - int(ta[i])
        if d > window_ps:
            i += 1
        elif d < -window_ps:
            j += 1
        else:
            # candidate pair; ambiguity if the next tag on either side also fits
            if (j + 1 < nb and int(tb[j + 1]) - int(ta[i]) <= window_ps) or \
               (i + 1 < na and abs(int(tb[j]) - int(ta[i + 1])) <= window_ps):
                ambiguous += 1
            matched += 1
            i += 1
            j += 1
    return matched, ambiguous


def coincidence_counts(streams: dict, settings, window_ps: int) -> CountsTable:
    """Build the tomography counts table from per-setting tag streams.

    ``streams`` maps setting_id -> TagStream; each of the four XX/X channel
    pairs of a setting contributes one (xx_outcome, x_outcome) entry.
    Entries produced by several settings are summed.
    """
    if window_ps <= 0:
        raise InvalidInputError("coincidence window must be > 0")
    entries = {}
    ambiguous_total = 0
    for setting in settings:
        stream = streams[setting.setting_id]
        if not stream.is_sorted():
            raise InvalidInputError("tag stream must be timestamp-sorted")
        labels = setting.outcome_labels()
        ch = setting.channels
        pair_channels = ((ch[0], ch[2]), (ch[0], ch[3]), (ch[1], ch[2]), (ch[1], ch[3]))
        for (label, (ca, cb)) in zip(labels, pair_channels):
            ta = stream.channel_times(ca)
            tb = stream.channel_times(cb)
            n, amb = match_coincidences(ta, tb, window_ps)
            entries[label] = entries.get(label, 0) + n
            ambiguous_total += amb
    return CountsTable(entries, window_ps=window_ps, ambiguous_matches=ambiguous_total,
                       metadata={"n_settings": len(settings)})


def degrees_from_counts(table: CountsTable) -> pol.DegreesOfCorrelation:
    """Degrees of correlation from a counts table holding co-basis entries.

    Needs the (H,H)-type quadruples in the linear, diagonal and circular
    bases (as produced by the bases3 setting preset or a full 6x6 table).
    """
    def contrast(a, b):
        ao, bo = pol.ORTHOGONAL[a], pol.ORTHOGONAL[b]
        try:
            co = table.entries[(a, b)] + table.entries[(ao, bo)]
            cross = table.entries[(a, bo)] + table.entries[(ao, b)]
        except KeyError as exc:
            raise EstimationError(f"counts table lacks the {a}/{b} basis quadruple") from exc
        return pol.degree_of_correlation(co, cross)

    return pol.DegreesOfCorrelation(contrast("H", "H"), contrast("D", "D"),
                                    contrast("R", "R"))

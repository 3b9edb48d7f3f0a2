"""Flow perception: context vectors in, (boarding, alighting) proposals out.

The default predictor is a pair of bagged regression-tree ensembles, one
per flow direction, trained on binned features with a weighted bootstrap:
per-sample weights scale the resampling probability of each row and also
enter the leaf averages. Training is a pure function of the sample
multiset: rows are put into a canonical order before any seeded draw, so
permuting the training set does not change the fitted model.

Any object with a ``propose(trip, contexts) -> (boardings, alightings)``
method can stand in for the default model; the recursion engine only uses
that surface. ``ReplayPredictor`` below replays recorded flows and is the
reference stub for end-to-end truth-recovery checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import Trip
from .errors import ContractViolation, InputError

SERIAL_FORMAT = "paxload-forest-v1"


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: int = 12
    min_samples_leaf: int = 2
    seed: int = 7
    n_bins: int = 32     # split-candidate resolution per feature

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1:
            raise ContractViolation("n_trees and max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ContractViolation("min_samples_leaf must be >= 1")
        if self.n_bins < 2:
            raise ContractViolation("n_bins must be >= 2")


# ----------------------------------------------------------------------
# binning
# ----------------------------------------------------------------------

def _cutpoints(col: np.ndarray, n_bins: int) -> np.ndarray:
    u = np.unique(col)
    if u.size <= 1:
        return np.empty(0)
    if u.size <= n_bins:
        return (u[1:] + u[:-1]) / 2.0
    qs = np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    return np.unique(qs)


def _bin_matrix(x: np.ndarray, n_bins: int):
    cuts = [_cutpoints(x[:, j], n_bins) for j in range(x.shape[1])]
    codes = np.empty(x.shape, dtype=np.int32)
    for j, cp in enumerate(cuts):
        codes[:, j] = np.searchsorted(cp, x[:, j], side="right")
    return cuts, codes


# ----------------------------------------------------------------------
# single tree, grown breadth-first on binned features
# ----------------------------------------------------------------------

def _grow_tree(codes_aug, valid_cut, cuts, y, w_eff, cnt_eff, max_depth, min_leaf):
    """Grow one tree; returns parallel node arrays.

    feature < 0 marks a leaf. Split gain is weighted variance reduction
    computed from per-bin weight/target histograms over all features at
    once; the row-major argmax resolves gain ties to the lowest feature
    then the lowest cut, so growth is fully deterministic.
    """
    n_feat, n = codes_aug.shape
    n_bins = valid_cut.shape[1] + 1
    n_cand = n_feat * (n_bins - 1)
    unit_weights = cnt_eff is w_eff or np.array_equal(cnt_eff, w_eff)
    wy = w_eff * y

    cap = 16
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap)
    n_nodes = 1

    def _ensure(extra):
        nonlocal cap, feature, threshold, left, right, value
        while n_nodes + extra > cap:
            cap *= 2
            feature = np.concatenate([feature, np.full(cap // 2, -1, dtype=np.int32)])
            threshold = np.concatenate([threshold, np.zeros(cap // 2)])
            left = np.concatenate([left, np.full(cap // 2, -1, dtype=np.int32)])
            right = np.concatenate([right, np.full(cap // 2, -1, dtype=np.int32)])
            value = np.concatenate([value, np.zeros(cap // 2)])

    idx = np.nonzero(w_eff > 0)[0]
    node_of = np.zeros(idx.size, dtype=np.int64)
    frontier = np.array([0], dtype=np.int64)

    for depth in range(max_depth + 1):
        if frontier.size == 0 or idx.size == 0:
            break
        local = np.searchsorted(frontier, node_of)
        n_act = frontier.size

        w_tot = np.bincount(local, weights=w_eff[idx], minlength=n_act)
        s_tot = np.bincount(local, weights=wy[idx], minlength=n_act)
        if unit_weights:
            c_tot = w_tot
        else:
            c_tot = np.bincount(local, weights=cnt_eff[idx], minlength=n_act)
        value[frontier] = s_tot / w_tot

        if depth == max_depth or n_cand == 0:
            break
        splittable = c_tot >= 2 * min_leaf
        if not splittable.any():
            break

        # drop samples sitting in nodes too small to split
        keep = splittable[local]
        sidx = idx[keep]
        remap = np.cumsum(splittable) - 1
        slocal = remap[local[keep]]
        live = np.nonzero(splittable)[0]
        n_live = live.size
        ns = sidx.size
        lw_tot, ls_tot, lc_tot = w_tot[live], s_tot[live], c_tot[live]

        # one flat histogram over (node, feature, bin) for every stat
        key = (slocal * (n_feat * n_bins) + codes_aug[:, sidx]).ravel()
        size = n_live * n_feat * n_bins
        w_rep = np.broadcast_to(w_eff[sidx], (n_feat, ns)).ravel()
        wy_rep = np.broadcast_to(wy[sidx], (n_feat, ns)).ravel()
        hw = np.bincount(key, weights=w_rep, minlength=size)
        hs = np.bincount(key, weights=wy_rep, minlength=size)
        hw = hw.reshape(n_live, n_feat, n_bins)
        hs = hs.reshape(n_live, n_feat, n_bins)
        # cut c in 1..n_bins-1 sends codes <= c-1 left
        wl = np.cumsum(hw[:, :, :-1], axis=2)
        sl = np.cumsum(hs[:, :, :-1], axis=2)
        if unit_weights:
            cl = wl
        else:
            cnt_rep = np.broadcast_to(cnt_eff[sidx], (n_feat, ns)).ravel()
            hc = np.bincount(key, weights=cnt_rep, minlength=size)
            cl = np.cumsum(hc.reshape(n_live, n_feat, n_bins)[:, :, :-1], axis=2)
        wr = lw_tot[:, None, None] - wl
        sr = ls_tot[:, None, None] - sl
        cr = lc_tot[:, None, None] - cl
        base = ls_tot * ls_tot / lw_tot
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sl * sl / wl + sr * sr / wr
        gain -= base[:, None, None]
        # empty sides show up as nan/inf but always violate the leaf minimum
        gain[(cl < min_leaf) | (cr < min_leaf) | ~valid_cut[None, :, :]] = -np.inf

        flat = gain.reshape(n_live, n_cand)
        best = np.argmax(flat, axis=1)
        best_gain = flat[np.arange(n_live), best]
        best_feat = best // (n_bins - 1)
        best_cut = best % (n_bins - 1) + 1

        do_split = best_gain > 1e-12
        n_split = int(do_split.sum())
        if n_split == 0:
            break

        parents = frontier[live[do_split]]
        pf = best_feat[do_split]
        pc = best_cut[do_split]
        _ensure(2 * n_split)
        child_l = n_nodes + 2 * np.arange(n_split)
        child_r = child_l + 1
        feature[parents] = pf.astype(np.int32)
        threshold[parents] = np.array(
            [cuts[f][c - 1] for f, c in zip(pf, pc)])
        left[parents] = child_l.astype(np.int32)
        right[parents] = child_r.astype(np.int32)
        n_nodes += 2 * n_split

        # route samples of split nodes into their children
        split_of_live = np.full(n_live, -1, dtype=np.int64)
        split_of_live[do_split] = np.arange(n_split)
        samp_split = split_of_live[slocal]
        carry = samp_split >= 0
        sub = sidx[carry]
        srow = samp_split[carry]
        sample_code = codes_aug[pf[srow], sub] - pf[srow] * n_bins
        go_left = sample_code <= pc[srow] - 1
        idx = sub
        node_of = np.where(go_left, child_l[srow], child_r[srow])
        frontier = np.sort(np.concatenate([child_l, child_r]))

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy())


# ----------------------------------------------------------------------
# ensemble
# ----------------------------------------------------------------------

class _Ensemble:
    """Trees flattened into shared arrays for vectorized prediction."""

    def __init__(self, feature, threshold, left, right, value, roots, max_depth):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value
        self.roots = roots
        self.max_depth = max_depth

    @classmethod
    def from_trees(cls, trees, max_depth):
        roots = []
        off = 0
        fs, ts, ls, rs, vs = [], [], [], [], []
        for feature, threshold, left, right, value in trees:
            roots.append(off)
            fs.append(feature)
            ts.append(threshold)
            ls.append(np.where(left >= 0, left + off, -1))
            rs.append(np.where(right >= 0, right + off, -1))
            vs.append(value)
            off += feature.size
        return cls(np.concatenate(fs), np.concatenate(ts),
                   np.concatenate(ls).astype(np.int32),
                   np.concatenate(rs).astype(np.int32),
                   np.concatenate(vs),
                   np.array(roots, dtype=np.int32), max_depth)

    def predict(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        ptr = np.broadcast_to(self.roots, (n, self.roots.size)).copy()
        rows = np.arange(n)[:, None]
        for _ in range(self.max_depth + 1):
            feat = self.feature[ptr]
            at_leaf = feat < 0
            if at_leaf.all():
                break
            xv = x[rows, np.where(at_leaf, 0, feat)]
            nxt = np.where(xv <= self.threshold[ptr], self.left[ptr], self.right[ptr])
            ptr = np.where(at_leaf, ptr, nxt)
        return self.value[ptr].mean(axis=1)


def _weighted_bootstrap(rng, cum_w: np.ndarray, n_draws: int) -> np.ndarray:
    u = rng.random(n_draws)
    pos = np.searchsorted(cum_w, u, side="right")
    return np.bincount(np.minimum(pos, cum_w.size - 1), minlength=cum_w.size).astype(float)


class BaggedTreeRegressor:
    """Two bagged tree ensembles, one for boardings and one for alightings."""

    def __init__(self, params: ForestParams, board: _Ensemble, alight: _Ensemble,
                 n_features: int):
        self.params = params
        self._board = board
        self._alight = alight
        self.n_features = n_features

    # engine-facing surface -------------------------------------------------
    def propose(self, trip: Optional[Trip], contexts) -> Tuple[np.ndarray, np.ndarray]:
        if contexts is None:
            raise InputError("fitted predictor needs context vectors")
        return self.predict(contexts)

    def predict(self, contexts) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(contexts, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise InputError("context matrix must be (n, %d)" % self.n_features)
        if not np.isfinite(x).all():
            raise InputError("context matrix contains non-finite values")
        b = np.maximum(self._board.predict(x), 0.0)
        a = np.maximum(self._alight.predict(x), 0.0)
        return b, a

    def state_bytes(self) -> bytes:
        """Canonical byte image of the fitted state, for digesting."""
        chunks = [json.dumps({
            "format": SERIAL_FORMAT,
            "n_features": self.n_features,
            "n_trees": self.params.n_trees,
            "max_depth": self.params.max_depth,
            "min_samples_leaf": self.params.min_samples_leaf,
            "seed": self.params.seed,
            "n_bins": self.params.n_bins,
        }, sort_keys=True).encode()]
        for ens in (self._board, self._alight):
            for arr in (ens.feature, ens.threshold, ens.left, ens.right,
                        ens.value, ens.roots):
                chunks.append(np.ascontiguousarray(arr).tobytes())
        return b"".join(chunks)

    # persistence -----------------------------------------------------------
    def save(self, path: str) -> None:
        header = json.dumps({
            "format": SERIAL_FORMAT,
            "n_features": self.n_features,
            "params": {
                "n_trees": self.params.n_trees,
                "max_depth": self.params.max_depth,
                "min_samples_leaf": self.params.min_samples_leaf,
                "seed": self.params.seed,
                "n_bins": self.params.n_bins,
            },
        })
        arrays = {"header": np.frombuffer(header.encode(), dtype=np.uint8)}
        for tag, ens in (("b", self._board), ("a", self._alight)):
            arrays[tag + "_feature"] = ens.feature
            arrays[tag + "_threshold"] = ens.threshold
            arrays[tag + "_left"] = ens.left
            arrays[tag + "_right"] = ens.right
            arrays[tag + "_value"] = ens.value
            arrays[tag + "_roots"] = ens.roots
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str) -> "BaggedTreeRegressor":
        with np.load(path) as data:
            try:
                header = json.loads(bytes(data["header"]).decode())
            except Exception as exc:
                raise InputError("unreadable model file %s" % path) from exc
            if header.get("format") != SERIAL_FORMAT:
                raise InputError("model file %s has unknown format %r"
                                 % (path, header.get("format")))
            params = ForestParams(**header["params"])
            parts = {}
            for tag in ("b", "a"):
                parts[tag] = _Ensemble(
                    data[tag + "_feature"], data[tag + "_threshold"],
                    data[tag + "_left"], data[tag + "_right"],
                    data[tag + "_value"], data[tag + "_roots"], params.max_depth)
        return cls(params, parts["b"], parts["a"], header["n_features"])


def fit_flow_predictor(contexts, board_targets, alight_targets,
                       sample_weights=None,
                       params: ForestParams = ForestParams()) -> BaggedTreeRegressor:
    """Fit the default predictor; a pure function of the training multiset."""
    x = np.asarray(contexts, dtype=float)
    yb = np.asarray(board_targets, dtype=float)
    ya = np.asarray(alight_targets, dtype=float)
    if x.ndim != 2:
        raise InputError("contexts must be a 2-d matrix")
    n = x.shape[0]
    if n == 0:
        raise InputError("cannot fit on an empty training set")
    if yb.shape != (n,) or ya.shape != (n,):
        raise InputError("target lengths must match the context count")
    if sample_weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weights, dtype=float)
        if w.shape != (n,):
            raise InputError("sample_weights length must match the context count")
        if (w < 0).any():
            raise InputError("sample_weights must be nonnegative")
        if w.sum() <= 0:
            raise InputError("sample_weights sum to zero")
        # zero weight means exactly "not in the training set"
        keep = w > 0
        if not keep.all():
            x, yb, ya, w = x[keep], yb[keep], ya[keep], w[keep]
            n = x.shape[0]

    # canonical row order: the fit must not depend on presentation order
    keys = (w, ya, yb) + tuple(x[:, j] for j in range(x.shape[1] - 1, -1, -1))
    order = np.lexsort(keys)
    x, yb, ya, w = x[order], yb[order], ya[order], w[order]

    cuts, codes = _bin_matrix(x, params.n_bins)
    n_feat = x.shape[1]
    n_bins = max((c.size for c in cuts), default=0) + 1
    # per-sample key fragment feature*n_bins + bincode, shared by all trees
    codes_aug = (np.arange(n_feat, dtype=np.int64)[:, None] * n_bins
                 + codes.T.astype(np.int64))
    valid_cut = np.zeros((n_feat, n_bins - 1), dtype=bool)
    for f, cp in enumerate(cuts):
        valid_cut[f, :cp.size] = True
    cum_w = np.cumsum(w / w.sum())
    unit = sample_weights is None or np.all(w == w[0])

    ensembles = []
    for stream, y in ((0, yb), (1, ya)):
        trees = []
        for t in range(params.n_trees):
            rng = np.random.default_rng((params.seed, stream, t))
            mult = _weighted_bootstrap(rng, cum_w, n)
            w_eff = mult if unit and w[0] == 1.0 else mult * w
            trees.append(_grow_tree(codes_aug, valid_cut, cuts, y, w_eff, mult,
                                    params.max_depth, params.min_samples_leaf))
        ensembles.append(_Ensemble.from_trees(trees, params.max_depth))
    return BaggedTreeRegressor(params, ensembles[0], ensembles[1], x.shape[1])


class ReplayPredictor:
    """Replays the recorded ground-truth flows of each trip.

    Stub used to verify the recursion engine recovers the exact load
    series when perception is perfect.
    """

    def propose(self, trip: Trip, contexts=None) -> Tuple[np.ndarray, np.ndarray]:
        if trip is None:
            raise InputError("ReplayPredictor needs the trip to replay")
        b = np.array([ev.mc_board for ev in trip.stops], dtype=float)
        a = np.array([ev.mc_alight for ev in trip.stops], dtype=float)
        return b, a

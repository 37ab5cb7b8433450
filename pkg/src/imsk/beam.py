"""Joint CTC/attention beam search with shallow LM fusion.

Each step every live hypothesis is expanded over the full output
vocabulary; candidate scores combine the attention decoder, the CTC
prefix probability, and an optional language model:

    score = ctc_weight * log p_ctc + (1 - ctc_weight) * log p_att
          + lm_weight * log p_lm

Hypotheses that emit the end-of-sequence symbol move to a finished set
with their complete-sequence CTC probability. Search stops once no live
hypothesis can still beat the best finished one (component scores only
ever decrease along an extension) or at the output-length cap.

Batched decoding stacks hypotheses from several utterances into shared
kernel calls. All per-step math runs through einsum and elementwise
kernels whose per-row accumulation order is independent of the number
and content of the other rows, and padded frames enter reductions as
exact zeros, so batched results are bit-identical to sequential ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ctc import CtcPrefixState, ctc_prefix_initial, ctc_prefix_score, ctc_prefix_score_all
from .nn.layers import NEG_FILL
from .tokenizer import BLANK_ID, SOS_EOS_ID


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 20
    ctc_weight: float = 0.5
    lm_weight: float = 0.5
    max_ratio: float = 1.0

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must lie in [0, 1]")
        if self.lm_weight < 0.0:
            raise ValueError("lm_weight must be >= 0")
        if not 0.0 < self.max_ratio <= 1.0:
            raise ValueError("max_ratio must lie in (0, 1]")


@dataclass
class Hypothesis:
    """One beam entry: sos-prefixed tokens plus component log-scores."""

    tokens: tuple[int, ...]
    score: float
    score_att: float
    score_ctc: float
    score_lm: float
    a: np.ndarray | None = None
    dec_state: list | None = None
    lm_state: list | None = None
    ctc_state: CtcPrefixState | None = None
    finished: bool = False

    @property
    def output_ids(self) -> tuple[int, ...]:
        return self.tokens[1:]


# -- row-stable inference kernels ---------------------------------------------
#
# np.einsum with its default (unoptimized) path accumulates every output
# element with a plain sequential loop, so a row's result depends only on
# that row. np.sum would not give that guarantee.


def _rows_linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("bi,io->bo", x, w) + b


def _rows_log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = np.einsum("bv->b", e)
    return (z - m) - np.log(s)[:, None]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def _lstm_rows(w, b, x, h, c):
    z = _rows_linear(np.concatenate([x, h], axis=1), w, b)
    H = h.shape[1]
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = _sigmoid(z[:, 3 * H :])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def _f64(t) -> np.ndarray:
    return np.asarray(t.data, dtype=np.float64).copy()


class _AsrKernel:
    """float64 copies of the recognizer weights for search-time math."""

    def __init__(self, model):
        self.vocab_size = model.vocab_size
        self.embed = _f64(model.embed.table)
        self.cells = [(_f64(c.w), _f64(c.b)) for c in model.dec_cells]
        self.units = model.dec_cfg.units
        self.out_w, self.out_b = _f64(model.out.w), _f64(model.out.b)
        self.ctc_w, self.ctc_b = _f64(model.ctc_out.w), _f64(model.ctc_out.b)
        self.enc_w, self.enc_b = _f64(model.att_enc.w), _f64(model.att_enc.b)
        self.dec_w, self.dec_b = _f64(model.att_dec.w), _f64(model.att_dec.b)
        self.loc_w, self.loc_b = _f64(model.att_loc.w), _f64(model.att_loc.b)
        self.conv = _f64(model.att_conv)
        self.vec = _f64(model.att_vec)

    def zero_dec_state(self, rows: int):
        z = np.zeros((rows, self.units))
        return [(z.copy(), z.copy()) for _ in self.cells]

    def attend(self, a_prev, q, h, vh, mask):
        R, Tm = a_prev.shape
        K = self.conv.shape[0]
        P = (K - 1) // 2
        pad = np.zeros((R, Tm + K - 1))
        pad[:, P : P + Tm] = a_prev
        win = sliding_window_view(pad, K, axis=1)
        f = np.einsum("btk,kc->btc", win, self.conv)
        loc = np.einsum("btc,ca->bta", f, self.loc_w) + self.loc_b
        wq = _rows_linear(q, self.dec_w, self.dec_b)[:, None, :]
        pre = np.tanh(vh + loc + wq)
        scores = np.einsum("bta,a->bt", pre, self.vec)
        scores = scores + (1.0 - mask) * NEG_FILL
        m = scores.max(axis=1, keepdims=True)
        e = np.exp(scores - m)
        s = np.einsum("bt->b", e)
        a = e / s[:, None]
        r = np.einsum("bt,bth->bh", a, h)
        return a, r

    def decode_rows(self, r, states, y_prev):
        x = np.concatenate([self.embed[y_prev], r], axis=1)
        new_states = []
        for (h, c), (w, b) in zip(states, self.cells):
            h, c = _lstm_rows(w, b, x, h, c)
            new_states.append((h, c))
            x = h
        return _rows_log_softmax(_rows_linear(x, self.out_w, self.out_b)), new_states


class _LmKernel:
    """float64 copies of the LM weights; mirrors LstmLm.lm_step."""

    def __init__(self, lm):
        self.embed = _f64(lm.embed.table)
        self.cells = [(_f64(c.w), _f64(c.b)) for c in lm.cells]
        self.units = lm.units
        self.out_w, self.out_b = _f64(lm.out.w), _f64(lm.out.b)

    def zero_state(self, rows: int):
        z = np.zeros((rows, self.units))
        return [(z.copy(), z.copy()) for _ in self.cells]

    def step(self, states, ids):
        x = self.embed[ids]
        new_states = []
        for (h, c), (w, b) in zip(states, self.cells):
            h, c = _lstm_rows(w, b, x, h, c)
            new_states.append((h, c))
            x = h
        return _rows_log_softmax(_rows_linear(x, self.out_w, self.out_b)), new_states


class _Lane:
    """Per-utterance search context: encodings, caps, live and done sets."""

    def __init__(self, h64: np.ndarray, kern: _AsrKernel, lmk, cfg: DecodeConfig):
        self.T = h64.shape[0]
        self.h = h64
        self.vh = _rows_linear(h64, kern.enc_w, kern.enc_b)
        ctc_logits = _rows_linear(h64, kern.ctc_w, kern.ctc_b)
        self.ctc_logp = _rows_log_softmax(ctc_logits)
        self.cap = int(self.T * cfg.max_ratio)
        start = Hypothesis(
            tokens=(SOS_EOS_ID,),
            score=0.0,
            score_att=0.0,
            score_ctc=0.0,
            score_lm=0.0,
            a=np.full(self.T, 1.0 / self.T),
            dec_state=kern.zero_dec_state(1),
            lm_state=lmk.zero_state(1) if lmk is not None else None,
            ctc_state=ctc_prefix_initial(self.ctc_logp, BLANK_ID),
        )
        self.active: list[Hypothesis] = [start]
        self.finished: list[Hypothesis] = []
        self.done = False
        # padded views are filled in once the lane joins a group
        self.h_pad = self.vh_pad = self.mask = None

    def pad_to(self, t_max: int):
        self.h_pad = np.zeros((t_max, self.h.shape[1]))
        self.h_pad[: self.T] = self.h
        self.vh_pad = np.zeros((t_max, self.vh.shape[1]))
        self.vh_pad[: self.T] = self.vh
        self.mask = np.zeros(t_max)
        self.mask[: self.T] = 1.0

    def best_finished(self) -> Hypothesis:
        return min(self.finished, key=lambda hy: (-hy.score, hy.tokens))


def _check_vocab(model, lm):
    if lm is None:
        return
    mh = getattr(model, "vocab_hash", "")
    lh = getattr(lm, "vocab_hash", "")
    if mh and lh and mh != lh:
        raise ValueError(f"vocabulary mismatch: model hash {mh!r} != lm hash {lh!r}")
    if lm.vocab_size != model.vocab_size:
        raise ValueError(
            f"vocabulary mismatch: model size {model.vocab_size}, lm size {lm.vocab_size}"
        )


def _frames(feat) -> np.ndarray:
    arr = feat.frames if hasattr(feat, "frames") else np.asarray(feat)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("empty feature matrix")
    return arr


def _search(lanes: list[_Lane], kern: _AsrKernel, lmk, cfg: DecodeConfig):
    lam = cfg.ctc_weight
    gam = cfg.lm_weight if lmk is not None else 0.0
    t_max = max(lane.T for lane in lanes)
    for lane in lanes:
        lane.pad_to(t_max)

    while True:
        rows = [(lane, hyp) for lane in lanes if not lane.done for hyp in lane.active]
        if not rows:
            break
        R = len(rows)
        y_prev = np.array([hyp.tokens[-1] for _, hyp in rows], dtype=np.int64)
        a_prev = np.zeros((R, t_max))
        for ri, (lane, hyp) in enumerate(rows):
            a_prev[ri, : lane.T] = hyp.a
        q = np.stack([hyp.dec_state[-1][0][0] for _, hyp in rows])
        h = np.stack([lane.h_pad for lane, _ in rows])
        vh = np.stack([lane.vh_pad for lane, _ in rows])
        mask = np.stack([lane.mask for lane, _ in rows])
        dec_states = [
            (
                np.stack([hyp.dec_state[li][0][0] for _, hyp in rows]),
                np.stack([hyp.dec_state[li][1][0] for _, hyp in rows]),
            )
            for li in range(len(kern.cells))
        ]

        a_new, r = kern.attend(a_prev, q, h, vh, mask)
        logp_att, new_dec = kern.decode_rows(r, dec_states, y_prev)
        if lmk is not None:
            lm_states = [
                (
                    np.stack([hyp.lm_state[li][0][0] for _, hyp in rows]),
                    np.stack([hyp.lm_state[li][1][0] for _, hyp in rows]),
                )
                for li in range(len(lmk.cells))
            ]
            logp_lm, new_lm = lmk.step(lm_states, y_prev)
        else:
            logp_lm = new_lm = None

        run_ctc = lam > 0.0
        for lane in lanes:
            if lane.done:
                continue
            cands = []
            for ri, (rl, hyp) in enumerate(rows):
                if rl is not lane:
                    continue
                if run_ctc:
                    psi, r_nb, r_b = ctc_prefix_score_all(
                        hyp.ctc_state, lane.ctc_logp, BLANK_ID
                    )
                else:
                    # a zero weight times an infeasible -inf prefix score
                    # would poison the sum with NaN, so skip CTC entirely
                    psi = r_nb = r_b = None
                la = logp_att[ri]
                ll = logp_lm[ri] if logp_lm is not None else None
                emitted = len(hyp.tokens) - 1

                eos_score = (
                    (lam * hyp.ctc_state.final_log_prob() if run_ctc else 0.0)
                    + (1.0 - lam) * (hyp.score_att + la[SOS_EOS_ID])
                    + (gam * (hyp.score_lm + ll[SOS_EOS_ID]) if ll is not None else 0.0)
                )
                cands.append((eos_score, hyp.tokens, ri, SOS_EOS_ID, None, None, None))
                if emitted >= lane.cap:
                    continue
                for c in range(kern.vocab_size):
                    if c == BLANK_ID or c == SOS_EOS_ID:
                        continue
                    s = (
                        (lam * psi[c] if run_ctc else 0.0)
                        + (1.0 - lam) * (hyp.score_att + la[c])
                        + (gam * (hyp.score_lm + ll[c]) if ll is not None else 0.0)
                    )
                    cands.append((s, hyp.tokens + (c,), ri, c, psi, r_nb, r_b))
            cands.sort(key=lambda it: (-it[0], it[1]))

            new_active = []
            for s, toks, ri, c, psi, r_nb, r_b in cands[: cfg.beam]:
                hyp = rows[ri][1]
                la = logp_att[ri]
                ll = logp_lm[ri] if logp_lm is not None else None
                att2 = hyp.score_att + la[c]
                lm2 = hyp.score_lm + (ll[c] if ll is not None else 0.0)
                if c == SOS_EOS_ID:
                    lane.finished.append(
                        Hypothesis(
                            tokens=toks,
                            score=float(s),
                            score_att=float(att2),
                            score_ctc=(
                                float(hyp.ctc_state.final_log_prob()) if run_ctc else 0.0
                            ),
                            score_lm=float(lm2),
                            a=hyp.a,
                            ctc_state=hyp.ctc_state,
                            finished=True,
                        )
                    )
                    continue
                new_active.append(
                    Hypothesis(
                        tokens=toks,
                        score=float(s),
                        score_att=float(att2),
                        score_ctc=float(psi[c]) if run_ctc else 0.0,
                        score_lm=float(lm2),
                        a=a_new[ri, : lane.T].copy(),
                        dec_state=[
                            (hh[ri : ri + 1].copy(), cc[ri : ri + 1].copy())
                            for hh, cc in new_dec
                        ],
                        lm_state=(
                            [
                                (hh[ri : ri + 1].copy(), cc[ri : ri + 1].copy())
                                for hh, cc in new_lm
                            ]
                            if new_lm is not None
                            else None
                        ),
                        ctc_state=(
                            CtcPrefixState(
                                r_nb=r_nb[:, c].copy(),
                                r_b=r_b[:, c].copy(),
                                last_label=int(c),
                                log_psi=float(psi[c]),
                            )
                            if run_ctc
                            else hyp.ctc_state
                        ),
                    )
                )
            lane.active = new_active
            if lane.finished:
                best_done = lane.best_finished().score
                if not lane.active or max(hy.score for hy in lane.active) <= best_done:
                    lane.done = True
                    lane.active = []
            elif not lane.active:
                raise RuntimeError("beam search lost all hypotheses")

    return [lane.best_finished() for lane in lanes]


def decode(feat, model, lm=None, cfg: DecodeConfig | None = None) -> Hypothesis:
    """Best finished hypothesis for one utterance."""
    cfg = cfg or DecodeConfig()
    _check_vocab(model, lm)
    kern = _AsrKernel(model)
    lmk = _LmKernel(lm) if lm is not None and cfg.lm_weight > 0.0 else None
    h64 = _f64(model.encode(_frames(feat)))
    lane = _Lane(h64, kern, lmk, cfg)
    return _search([lane], kern, lmk, cfg)[0]


def decode_nbest(
    feat, model, lm=None, cfg: DecodeConfig | None = None, n: int = 1
) -> list[Hypothesis]:
    """Top-n finished hypotheses for one utterance, best first.

    Ranking follows the same (score, token sequence) order the search
    itself uses, so element 0 equals decode()'s result.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or DecodeConfig()
    _check_vocab(model, lm)
    kern = _AsrKernel(model)
    lmk = _LmKernel(lm) if lm is not None and cfg.lm_weight > 0.0 else None
    h64 = _f64(model.encode(_frames(feat)))
    lane = _Lane(h64, kern, lmk, cfg)
    _search([lane], kern, lmk, cfg)
    ranked = sorted(lane.finished, key=lambda hy: (-hy.score, hy.tokens))
    return ranked[:n]


def decode_batch(
    feats, model, lm=None, cfg: DecodeConfig | None = None, batch_size: int = 1
) -> list[Hypothesis]:
    """Decode a list of utterances; token output is identical to mapping
    decode() over the list one by one, for every batch size."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    cfg = cfg or DecodeConfig()
    _check_vocab(model, lm)
    kern = _AsrKernel(model)
    lmk = _LmKernel(lm) if lm is not None and cfg.lm_weight > 0.0 else None
    arrs = [_frames(f) for f in feats]
    results: list[Hypothesis] = []
    for i in range(0, len(arrs), batch_size):
        lanes = [_Lane(_f64(model.encode(a)), kern, lmk, cfg) for a in arrs[i : i + batch_size]]
        results.extend(_search(lanes, kern, lmk, cfg))
    return results


def rescore(feat, model, tokens, lm=None):
    """Teacher-forced component scores of one finished token sequence.

    Returns (att, ctc, lm) log-probabilities of `tokens` (output ids, no
    sos/eos) computed by direct replay, independent of any search state.
    """
    kern = _AsrKernel(model)
    h64 = _f64(model.encode(_frames(feat)))
    T = h64.shape[0]
    vh = _rows_linear(h64, kern.enc_w, kern.enc_b)[None]
    ctc_logp = _rows_log_softmax(_rows_linear(h64, kern.ctc_w, kern.ctc_b))

    seq = list(tokens) + [SOS_EOS_ID]
    a = np.full((1, T), 1.0 / T)
    states = kern.zero_dec_state(1)
    mask = np.ones((1, T))
    att = 0.0
    prev = SOS_EOS_ID
    for t in seq:
        q = states[-1][0]
        a, r = kern.attend(a, q, h64[None], vh, mask)
        logp, states = kern.decode_rows(r, states, np.array([prev], dtype=np.int64))
        att += float(logp[0, t])
        prev = t

    state = ctc_prefix_initial(ctc_logp, BLANK_ID)
    for t in tokens:
        _, state = ctc_prefix_score(state, int(t), ctc_logp, BLANK_ID)
    ctc = state.final_log_prob()

    lm_score = 0.0
    if lm is not None:
        lmk = _LmKernel(lm)
        st = lmk.zero_state(1)
        prev = SOS_EOS_ID
        for t in seq:
            logp, st = lmk.step(st, np.array([prev], dtype=np.int64))
            lm_score += float(logp[0, t])
            prev = t
    return att, ctc, lm_score

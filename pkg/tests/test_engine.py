import math
import random
from dataclasses import replace

import numpy as np
import pytest

from isicap.dist import Dist
from isicap.engine import (
    RsaConfig,
    build_step_state,
    decode_beam,
    decode_greedy,
    listener_step,
    speaker_step,
    utility_u1,
    utility_u1_issue,
    utility_u2_entropy,
)
from isicap.errors import AllMassZero
from isicap.issues import partition_by_attribute, sample_context
from isicap.speakers import template_speaker

from _synth import random_world

NEG_INF = float("-inf")
EOS = "</s>"


def rows_from_probs(prob_rows, vocab):
    """Build per-image S0 rows from explicit probability tables."""
    return {
        image: Dist(tuple(vocab), np.log(np.asarray(ps, dtype=float)))
        for image, ps in prob_rows.items()
    }


class TestListenerStep:
    def test_direct_bayes_arithmetic(self):
        rows = rows_from_probs(
            {"i1": [0.8, 0.2], "i2": [0.4, 0.6]}, vocab=("w", EOS)
        )
        l1 = listener_step(rows, "w")
        assert l1.prob("i1") == pytest.approx(2 / 3, abs=1e-12)
        assert l1.prob("i2") == pytest.approx(1 / 3, abs=1e-12)

    def test_identical_rows_give_uniform(self):
        rows = rows_from_probs(
            {f"i{k}": [0.3, 0.7] for k in range(4)}, vocab=("w", EOS)
        )
        l1 = listener_step(rows, "w")
        assert np.allclose(l1.probs(), 0.25, atol=1e-12)

    def test_impossible_for_one_image(self):
        rows = {
            "i1": Dist(("w", EOS), np.log([0.5, 0.5])),
            "i2": Dist(("w", EOS), np.array([NEG_INF, 0.0])),
        }
        l1 = listener_step(rows, "w")
        assert l1.prob("i1") == pytest.approx(1.0, abs=1e-12)
        assert l1.prob("i2") == 0.0

    def test_impossible_for_all_images(self):
        rows = {
            "i1": Dist(("w", EOS), np.array([NEG_INF, 0.0])),
            "i2": Dist(("w", EOS), np.array([NEG_INF, 0.0])),
        }
        with pytest.raises(AllMassZero):
            listener_step(rows, "w")

    def test_bayes_oracle_random_matrices(self):
        # independent direct computation in probability space
        rng = np.random.default_rng(42)
        for _ in range(200):
            n_img = int(rng.integers(2, 7))
            n_tok = int(rng.integers(2, 6))
            probs = rng.dirichlet(np.ones(n_tok), size=n_img)
            vocab = tuple(f"w{j}" for j in range(n_tok))
            rows = {f"i{k}": Dist(vocab, np.log(probs[k])) for k in range(n_img)}
            for j in range(n_tok):
                expected = probs[:, j] / probs[:, j].sum()
                got = listener_step(rows, vocab[j]).probs()
                assert np.max(np.abs(got - expected)) < 1e-10


class TestUtilities:
    def uniform_l1(self, n):
        return Dist(tuple(f"i{k}" for k in range(n)), np.full(n, -math.log(n)))

    def test_u1_uniform(self):
        assert utility_u1(self.uniform_l1(4), "i0") == pytest.approx(math.log(0.25))

    def test_u1_point_mass(self):
        d = Dist(("i0", "i1"), np.array([0.0, NEG_INF]))
        assert utility_u1(d, "i0") == 0.0

    def test_u1_direct(self):
        d = Dist(("i0", "i1"), np.log([2 / 3, 1 / 3]))
        assert utility_u1(d, "i0") == pytest.approx(math.log(2 / 3), abs=1e-12)

    def test_u1_negative_infinity_is_legal(self):
        d = Dist(("i0", "i1"), np.array([NEG_INF, 0.0]))
        assert utility_u1(d, "i0") == NEG_INF

    def test_u1_issue_singleton_equals_u1(self):
        d = Dist(("i0", "i1", "i2"), np.log([0.5, 0.25, 0.25]))
        assert utility_u1_issue(d, "i0", {"i0"}) == pytest.approx(utility_u1(d, "i0"))

    def test_u1_issue_full_support_is_zero(self):
        d = self.uniform_l1(5)
        assert utility_u1_issue(d, "i0", set(d.support)) == pytest.approx(0.0, abs=1e-12)

    def test_u1_issue_uniform_cell_of_two(self):
        assert utility_u1_issue(self.uniform_l1(6), "i0", {"i0", "i1"}) == pytest.approx(
            math.log(1 / 3), abs=1e-12
        )

    def test_u2_uniform_within_cell(self):
        assert utility_u2_entropy(self.uniform_l1(4), {"i0", "i1"}) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_u2_concentrated_cell(self):
        d = Dist(("i0", "i1", "i2"), np.log([0.5, 1e-300, 0.5 - 1e-300]))
        assert utility_u2_entropy(d, {"i0", "i1"}) == pytest.approx(0.0, abs=1e-9)

    def test_u2_quarter_three_quarters(self):
        d = Dist(("i0", "i1", "i2"), np.log([0.125, 0.375, 0.5]))
        # within-cell conditional [0.25, 0.75]
        assert utility_u2_entropy(d, {"i0", "i1"}) == pytest.approx(0.562335, abs=1e-6)

    def test_u2_zero_mass_cell(self):
        d = Dist(("i0", "i1"), np.array([0.0, NEG_INF]))
        with pytest.raises(AllMassZero):
            utility_u2_entropy(d, {"i1"})

    def test_u2_unnormalized_variant(self):
        d = Dist(("i0", "i1", "i2"), np.log([0.25, 0.25, 0.5]))
        # H applied to the masked unnormalized vector
        want = -2 * 0.25 * math.log(0.25)
        got = utility_u2_entropy(d, {"i0", "i1"}, mode="unnormalized")
        assert got == pytest.approx(want, abs=1e-12)


def synth_state(backend, context, prefix=()):
    return build_step_state(backend, context.images(), prefix)


def tv(d1, d2):
    return 0.5 * float(np.abs(d1.probs() - d2.probs()).sum())


class TestSpeakerStep:
    def test_alpha_zero_collapses_to_s0(self, backend, o1_color_context, defaults):
        state = synth_state(backend, o1_color_context)
        cfg = replace(defaults, alpha=0.0)
        row = state.s0_rows["o1"]
        for model in ("s1", "s1c", "s1ch"):
            d = speaker_step(state, cfg, "o1", issue_cell={"o1", "o2"}, model=model)
            assert tv(d, row) < 1e-10

    def test_model_s0_returns_raw_row(self, backend, o1_color_context, defaults):
        state = synth_state(backend, o1_color_context)
        d = speaker_step(state, defaults, "o1", model="s0")
        assert tv(d, state.s0_rows["o1"]) == 0.0

    def test_one_cell_issue_is_vacuous(self, backend, o1_color_context, defaults):
        state = synth_state(backend, o1_color_context)
        cell = set(o1_color_context.images())
        d = speaker_step(state, defaults, "o1", issue_cell=cell, model="s1c")
        assert tv(d, state.s0_rows["o1"]) < 1e-10

    def test_singleton_cell_collapses(self, backend, o1_color_context, defaults):
        state = synth_state(backend, o1_color_context)
        s1 = speaker_step(state, defaults, "o1", model="s1")
        s1c = speaker_step(state, defaults, "o1", issue_cell={"o1"}, model="s1c")
        assert tv(s1, s1c) < 1e-10
        cfg0 = replace(defaults, beta=0.0)
        s1ch = speaker_step(state, cfg0, "o1", issue_cell={"o1"}, model="s1ch")
        assert tv(s1c, s1ch) < 1e-10

    def test_first_token_argmax_is_issue_token(self, backend, o1_color_context, defaults):
        state = synth_state(backend, o1_color_context)
        for model in ("s1c", "s1ch"):
            d = speaker_step(state, defaults, "o1", issue_cell={"o1", "o2"}, model=model)
            assert d.support[int(np.argmax(d.logp))] == "red"

    def test_issue_cell_required(self, backend, o1_color_context, defaults):
        state = synth_state(backend, o1_color_context)
        with pytest.raises(ValueError):
            speaker_step(state, defaults, "o1", model="s1c")

    def test_l1_cols_match_bayes_transform(self, backend, o1_color_context):
        state = synth_state(backend, o1_color_context, prefix=("red",))
        images = state.images()
        for tok, col in state.l1_cols.items():
            raw = np.array([math.exp(state.s0_rows[i].logprob(tok)) for i in images])
            assert np.max(np.abs(col.probs() - raw / raw.sum())) < 1e-12

    def test_alpha_ratio_monotonicity(self):
        rng = np.random.default_rng(7)
        grid = [0.0, 1.0, 3.0, 10.0]
        checked = 0
        for trial in range(100):
            world = random_world(int(rng.integers(4, 8)), seed=trial)
            issue = partition_by_attribute(world, "color")
            target = world.ids()[0]
            context = sample_context(issue, target, 6, seed=trial)
            backend = template_speaker(world)
            state = build_step_state(backend, context.images(), ())
            cell = frozenset(context.same_cell)
            u = {
                tok: utility_u1_issue(col, target, cell)
                for tok, col in state.l1_cols.items()
            }
            tokens = [t for t, v in u.items() if v > NEG_INF]
            pairs = [
                (w, v)
                for w in tokens
                for v in tokens
                if u[w] > u[v] + 1e-9
            ][:5]
            dists = {
                a: speaker_step(
                    state, RsaConfig(alpha=a), target, issue_cell=cell, model="s1c"
                )
                for a in grid
            }
            for w, v in pairs:
                ratios = [
                    dists[a].prob(w) / dists[a].prob(v) for a in grid if dists[a].prob(v) > 0
                ]
                assert all(b > a for a, b in zip(ratios, ratios[1:])), (w, v, ratios)
                checked += 1
        assert checked >= 100

    def test_plain_mixture_base_switch(self, backend, o1_color_context):
        # with the plain utility as mixture base and beta=0, the mixed
        # speaker reduces to the issue-blind one for any cell
        state = synth_state(backend, o1_color_context)
        cfg = RsaConfig(beta=0.0, mixture_base="plain")
        s1 = speaker_step(state, cfg, "o1", model="s1")
        s1ch = speaker_step(state, cfg, "o1", issue_cell={"o1", "o2"}, model="s1ch")
        assert tv(s1, s1ch) < 1e-10

    def test_unnormalized_entropy_mode_differs(self, backend, o1_color_context):
        state = synth_state(backend, o1_color_context)
        ren = speaker_step(
            state, RsaConfig(entropy_mode="renormalized"), "o1", {"o1", "o2"}, "s1ch"
        )
        unn = speaker_step(
            state, RsaConfig(entropy_mode="unnormalized"), "o1", {"o1", "o2"}, "s1ch"
        )
        assert tv(ren, unn) > 1e-6

    def test_beta_one_ranks_by_entropy_among_equal_cost(self, backend, o1_color_context):
        # o1 step 0: red / small / square are all true, hence equal cost
        state = synth_state(backend, o1_color_context)
        cfg = RsaConfig(alpha=5.0, beta=1.0)
        cell = frozenset(o1_color_context.same_cell)
        d = speaker_step(state, cfg, "o1", issue_cell=cell, model="s1ch")
        u2 = {
            t: utility_u2_entropy(state.l1_cols[t], cell) for t in ("red", "small", "square")
        }
        assert u2["red"] > u2["small"]  # red spreads over the cell, small concentrates
        for a in ("red", "small", "square"):
            for b in ("red", "small", "square"):
                if u2[a] > u2[b] + 1e-12:
                    assert d.prob(a) > d.prob(b)


class TestDecode:
    def test_greedy_max_len_one(self, backend, o1_color_context, defaults):
        cfg = replace(defaults, max_len=1)
        cap = decode_greedy(backend, o1_color_context, cfg, "s1ch")
        assert len(cap) == 2 and cap[-1] == EOS

    def test_s0_caption_ignores_issue(self, shapes6, backend, defaults):
        captions = set()
        for attr in ("color", "size", "shape"):
            issue = partition_by_attribute(shapes6, attr)
            ctx = sample_context(issue, "o1", 40, seed=0)
            captions.add(decode_greedy(backend, ctx, defaults, "s0"))
        assert len(captions) == 1

    def test_s1ch_tracks_the_issue(self, shapes6, backend, defaults):
        color = sample_context(partition_by_attribute(shapes6, "color"), "o1", 40, 0)
        size = sample_context(partition_by_attribute(shapes6, "size"), "o1", 40, 0)
        assert "red" in decode_greedy(backend, color, defaults, "s1ch")
        assert "small" in decode_greedy(backend, size, defaults, "s1ch")

    def test_beam_width_one_equals_greedy(self):
        rng = random.Random(5)
        for trial in range(100):
            world = random_world(rng.randint(4, 8), seed=1000 + trial)
            attr = rng.choice(list(world.schema.names()))
            issue = partition_by_attribute(world, attr)
            target = rng.choice(world.ids())
            context = sample_context(issue, target, rng.randint(3, 8), seed=trial)
            config = RsaConfig(
                alpha=rng.choice([0.0, 1.0, 3.0, 10.0]),
                beta=rng.choice([0.0, 0.4, 1.0]),
                max_len=rng.randint(1, 5),
                decode="beam",
                beam_width=1,
            )
            model = rng.choice(("s0", "s1", "s1c", "s1ch"))
            backend = template_speaker(world)
            greedy = decode_greedy(backend, context, config, model)
            beamed = decode_beam(backend, context, config, model)
            assert beamed == greedy, (trial, model, config.alpha, config.beta)

    def test_beam_total_score_at_least_greedy(self, shapes6, backend, defaults):
        from isicap.engine import caption_level_incremental

        for attr in ("color", "size"):
            issue = partition_by_attribute(shapes6, attr)
            for target in shapes6.ids():
                ctx = sample_context(issue, target, 40, seed=0)
                cfg = replace(defaults, decode="beam", beam_width=5, max_len=6)
                beamed = decode_beam(backend, ctx, cfg, "s1ch")
                greedy = decode_greedy(backend, ctx, cfg, "s1ch")
                lp_beam = caption_level_incremental(backend, ctx, cfg, "s1ch", beamed)
                lp_greedy = caption_level_incremental(backend, ctx, cfg, "s1ch", greedy)
                assert lp_beam >= lp_greedy - 1e-12

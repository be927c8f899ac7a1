import numpy as np
import pytest

from s2sf.errors import ModeError, ShapeError
from s2sf.sequence import (
    apply_fi_pose_masking,
    assemble_interp_segment,
    build_unified,
    embed_pose_track,
    sample_subtask,
)
from s2sf.world import generate_episode


@pytest.fixture(scope="module")
def episode():
    return generate_episode(21, 9, 16, 16)


@pytest.fixture(scope="module")
def unified(episode):
    return build_unified(episode)


class TestAssemble:
    def test_interior_length(self, episode):
        interior = episode.i[1:-1]
        assert interior.shape[0] == 7
        clip = assemble_interp_segment(episode.x[-1], episode.g[0], interior)
        assert clip.shape[0] == 9
        assert (clip == episode.i).all()

    def test_boundary_bitwise(self, episode):
        clip = assemble_interp_segment(episode.x[-1], episode.g[0], episode.i[1:-1])
        assert (clip[0] == episode.x[-1]).all()
        assert (clip[-1] == episode.g[0]).all()

    def test_degenerate_t2(self, episode):
        clip = assemble_interp_segment(episode.x[-1], episode.g[0], episode.i[1:1])
        assert clip.shape[0] == 2

    def test_wrong_interior_shape(self, episode):
        with pytest.raises(ShapeError):
            assemble_interp_segment(episode.x[-1], episode.g[0], episode.i[:, :, :8, :8])


class TestBuildUnified:
    def test_length(self, unified):
        assert unified.frames.shape[0] == 27

    def test_labels(self, unified):
        assert all(lbl == "interp" for lbl in unified.segment_labels[9:18])
        assert unified.segment_labels[:9] == ["exo"] * 9
        assert unified.segment_labels[18:] == ["ego"] * 9

    def test_seam_poses_equal(self, unified):
        assert unified.poses[8].rotation == unified.poses[9].rotation
        assert (unified.poses[8].translation == unified.poses[9].translation).all()

    def test_split_reassemble_roundtrip(self, episode, unified):
        # splitting at the labels reproduces the episode segments bitwise
        T = episode.T
        assert (unified.frames[:T] == episode.x).all()
        assert (unified.frames[T : 2 * T] == episode.i).all()
        assert (unified.frames[2 * T :] == episode.g).all()


class TestSampleSubtask:
    def test_direct_always_direct(self, unified):
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert sample_subtask(unified, rng, "direct").kind == "exo_to_ego_direct"

    def test_finetune_balance(self, unified):
        # binomial bound: 10k fair draws land in [0.47, 0.53] with >99.9% confidence
        rng = np.random.default_rng(123)
        kinds = [sample_subtask(unified, rng, "finetune").kind for _ in range(10_000)]
        frac = kinds.count("exo_to_interp") / len(kinds)
        assert 0.47 <= frac <= 0.53

    def test_seeded_reproducibility(self, unified):
        a = [sample_subtask(unified, np.random.default_rng(9), "finetune").kind for _ in range(1)]
        b = [sample_subtask(unified, np.random.default_rng(9), "finetune").kind for _ in range(1)]
        assert a == b

    def test_pair_shapes(self, unified):
        rng = np.random.default_rng(1)
        pair = sample_subtask(unified, rng, "finetune")
        assert pair.frames.shape[0] == 18
        assert len(pair.poses) == 18

    def test_seam_sharing(self, unified):
        rng = np.random.default_rng(2)
        pairs = {}
        while len(pairs) < 2:
            p = sample_subtask(unified, rng, "finetune")
            pairs[p.kind] = p
        T = unified.T
        assert (pairs["exo_to_interp"].frames[T:] == pairs["interp_to_ego"].frames[:T]).all()

    def test_unknown_mode(self, unified):
        with pytest.raises(ModeError):
            sample_subtask(unified, np.random.default_rng(0), "pretrain")


class TestPoseMasking:
    def test_fpi_identity(self, unified):
        pair = sample_subtask(unified, np.random.default_rng(3), "finetune")
        out = apply_fi_pose_masking(pair, "FPI")
        assert not out.pose_zeroed.any()
        assert (out.frames == pair.frames).all()

    def test_fi_exo_to_interp_all_zero(self, unified):
        rng = np.random.default_rng(4)
        pair = sample_subtask(unified, rng, "finetune")
        while pair.kind != "exo_to_interp":
            pair = sample_subtask(unified, rng, "finetune")
        out = apply_fi_pose_masking(pair, "FI")
        assert out.pose_zeroed.all()
        emb = embed_pose_track(out.poses, "global", 16, 16, 4.0, zero_mask=out.pose_zeroed)
        assert (emb == 0).all()

    def test_fi_interp_to_ego_half_zero(self, unified):
        rng = np.random.default_rng(5)
        pair = sample_subtask(unified, rng, "finetune")
        while pair.kind != "interp_to_ego":
            pair = sample_subtask(unified, rng, "finetune")
        out = apply_fi_pose_masking(pair, "FI")
        T = unified.T
        assert out.pose_zeroed[:T].all()
        assert not out.pose_zeroed[T:].any()
        emb = embed_pose_track(out.poses, "plucker", 16, 16, 4.0, zero_mask=out.pose_zeroed)
        assert (emb[:T] == 0).all()
        assert np.abs(emb[T:]).max() > 0

    def test_direct_masks_exo_only(self, unified):
        pair = sample_subtask(unified, np.random.default_rng(6), "direct")
        out = apply_fi_pose_masking(pair, "Direct")
        T = unified.T
        assert out.pose_zeroed[:T].all()
        assert not out.pose_zeroed[T:].any()

    def test_unknown_ablation(self, unified):
        pair = sample_subtask(unified, np.random.default_rng(7), "finetune")
        with pytest.raises(ModeError):
            apply_fi_pose_masking(pair, "fpi")

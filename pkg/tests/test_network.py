"""Backbone/decoder structure, stage shapes, budgets, checkpoints."""

import numpy as np
import pytest

from gmbinet import tensor as T
from gmbinet.layers import CheckpointError, load_checkpoint, save_checkpoint
from gmbinet.network import (IN_CHANNELS, STAGE_CHANNELS, STAGE_REPEATS,
                             build_backbone, build_classifier, build_gmbinet,
                             decode, encode, logits_matrix, predict,
                             stage_plan)
from gmbinet.tensor import ShapeError, Tensor


class TestStagePlan:
    def test_default_widths(self):
        plan = stage_plan()
        assert tuple(s.out_channels for s in plan) == (16, 32, 64, 96, 128)
        assert tuple(s.repeats for s in plan) == (1, 3, 4, 6, 3)
        assert tuple(s.divisor for s in plan) == (2, 4, 8, 16, 32)

    def test_width_mult_keeps_group_divisibility(self):
        for mult in (0.5, 0.75, 1.3):
            for stage in stage_plan(scale_dim=4, width_mult=mult)[1:]:
                assert stage.out_channels % 4 == 0

    def test_invalid_mult(self):
        with pytest.raises(ValueError):
            stage_plan(width_mult=0)


class TestShapes:
    def test_encoder_shapes_at_512(self):
        graph = build_gmbinet(input_size=512)
        shapes = graph.root.encoder_shapes((1, 3, 512, 512))
        assert shapes == [
            (1, 16, 256, 256),
            (1, 32, 128, 128),
            (1, 64, 64, 64),
            (1, 96, 32, 32),
            (1, 128, 16, 16),
        ]

    def test_counted_output_shape(self):
        graph = build_gmbinet(input_size=512)
        assert graph.output_shape() == (1, 1, 512, 512)

    def test_forward_shapes_at_64(self, rng):
        graph = build_gmbinet(input_size=64)
        x = Tensor(rng.standard_normal((2, 3, 64, 64)).astype(np.float32))
        out = graph.run(x)
        assert out.final.shape == (2, 1, 64, 64)
        assert len(out.sides) == 5
        for i, side in enumerate(out.sides, start=1):
            assert side.shape == (2, 1, 64 // 2 ** i, 64 // 2 ** i)
        assert out.final.data.min() >= 0.0 and out.final.data.max() <= 1.0

    def test_encode_decode_split(self, rng):
        graph = build_gmbinet(input_size=64)
        x = Tensor(rng.standard_normal((1, 3, 64, 64)).astype(np.float32))
        feats = encode(x, graph)
        assert len(feats) == 5
        out = decode(feats, graph)
        assert out.final.shape == (1, 1, 64, 64)

    def test_indivisible_input_rejected(self, rng):
        graph = build_gmbinet(input_size=64)
        x = Tensor(rng.standard_normal((1, 3, 50, 50)).astype(np.float32))
        with pytest.raises(ShapeError):
            encode(x, graph)


class TestBudgets:
    def test_parameter_budget(self):
        graph = build_gmbinet(input_size=512)
        params = graph.total_params()
        assert abs(params - 190_000) / 190_000 < 0.15

    def test_mac_budget(self):
        graph = build_gmbinet(input_size=512)
        macs = graph.total_macs()
        assert abs(macs - 390_000_000) / 390_000_000 < 0.20

    def test_budgets_invariant_in_scale_dim(self):
        totals = set()
        for n in (1, 2, 4, 8, 16):
            graph = build_gmbinet(scale_dim=n, input_size=512)
            totals.add((graph.total_params(), graph.total_macs()))
        assert len(totals) == 1

    def test_width_mult_shrinks_network(self):
        full = build_gmbinet(input_size=64).total_params()
        half = build_gmbinet(width_mult=0.5, input_size=64).total_params()
        assert half < full


class TestPredict:
    def test_resizes_to_working_resolution_and_back(self, rng):
        graph = build_gmbinet(input_size=64)
        image = Tensor(rng.random((1, 3, 100, 80)).astype(np.float32))
        saliency = predict(image, graph, size=64)
        assert saliency.shape == (1, 1, 100, 80)
        assert saliency.data.min() >= 0.0 and saliency.data.max() <= 1.0

    def test_native_resolution_skips_resize(self, rng):
        graph = build_gmbinet(input_size=64)
        image = Tensor(rng.random((1, 3, 64, 64)).astype(np.float32))
        assert predict(image, graph).shape == (1, 1, 64, 64)


class TestClassifier:
    def test_forward_and_logits(self, rng):
        graph = build_classifier(6, input_size=64)
        x = Tensor(rng.standard_normal((2, 3, 64, 64)).astype(np.float32))
        logits = graph.run(x)
        assert logits.shape == (2, 6, 1, 1)
        assert logits_matrix(logits).shape == (2, 6)

    def test_parameter_budget(self):
        # backbone-only budget: the saliency decoder replaced by one head
        graph = build_classifier(6, input_size=512)
        params = graph.total_params()
        assert 0.1e6 < params < 0.25e6

    def test_too_few_classes(self):
        with pytest.raises(ValueError):
            build_classifier(1)


class TestCheckpoints:
    def test_roundtrip_restores_exactly(self, tmp_path, rng):
        graph = build_backbone(input_size=64)
        path = str(tmp_path / "net.ckpt")
        save_checkpoint(graph, path)
        reference = [p.data.copy() for p in graph.root.params()]
        for p in graph.root.params():
            p.data += 1.0
        load_checkpoint(graph, path)
        for p, want in zip(graph.root.params(), reference):
            np.testing.assert_array_equal(p.data, want)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        graph = build_backbone(input_size=64)
        p1, p2 = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_checkpoint(graph, p1)
        load_checkpoint(graph, p1)
        save_checkpoint(graph, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_fingerprint_mismatch_rejected(self, tmp_path):
        a = build_backbone(input_size=64)
        b = build_backbone(scale_dim=2, width_mult=0.5, input_size=64)
        path = str(tmp_path / "a.ckpt")
        save_checkpoint(a, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(b, path)

    def test_garbage_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(CheckpointError):
            load_checkpoint(build_backbone(input_size=64), str(path))

    def test_running_stats_survive_roundtrip(self, tmp_path, rng):
        graph = build_backbone(input_size=64)
        x = Tensor(rng.standard_normal((2, 3, 64, 64)).astype(np.float32))
        graph.train()
        graph.run(x)  # perturb running statistics
        path = str(tmp_path / "net.ckpt")
        save_checkpoint(graph, path)
        buffers = {name: buf.copy() for name, buf in graph.root.named_buffers()}
        for _, buf in graph.root.named_buffers():
            buf += 0.5
        load_checkpoint(graph, path)
        for name, buf in graph.root.named_buffers():
            np.testing.assert_allclose(buf, buffers[name], rtol=1e-6)

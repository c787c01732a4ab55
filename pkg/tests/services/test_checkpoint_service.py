import struct
from collections import OrderedDict

import numpy as np
import pytest

from services.checkpoint_service import (
    MAGIC, Checkpoint, CheckpointFormatError, CheckpointMismatchError, decode_checkpoint, encode_checkpoint,
    load_checkpoint, read_checkpoint, save_checkpoint,
)
from services.model_zoo import ArchitectureSpec, build_architecture, conv, flatten, output
from services.network import Network


def tiny_spec(name="tiny"):
    return ArchitectureSpec(name, (conv(2, 3, 1, "same", "relu"), flatten(), output(2)),
                            input_length=8, num_classes=2)


class TestCheckpointRoundTrip:
    def setup_method(self):
        self.network = Network(build_architecture("dieleman"), seed=4)

    def test_restores_weights_and_statistics(self, tmp_path):
        state = self.network.state_dict()
        first_bn = next(name for name in state if name.endswith("running_mean"))
        self.network.load_state_dict({**state, first_bn: np.full_like(state[first_bn], 0.25)})

        path = save_checkpoint(self.network, tmp_path / "dieleman.ckpt", {"epoch": 3, "best_epoch": 2, "seed": 4})
        restored = load_checkpoint(path)

        assert restored.spec.name == "dieleman"
        assert restored.metadata == {"epoch": 3, "best_epoch": 2, "seed": 4}
        assert list(restored.state_dict()) == list(self.network.state_dict())
        for name, value in self.network.state_dict().items():
            np.testing.assert_array_equal(restored.state_dict()[name], value)

    def test_restored_network_predicts_identically(self, tmp_path):
        path = save_checkpoint(self.network, tmp_path / "model.ckpt")
        x = np.random.default_rng(0).standard_normal((2, 110250))
        np.testing.assert_allclose(load_checkpoint(path).predict_proba(x), self.network.eval().predict_proba(x),
                                   atol=1e-6)

    def test_no_temp_file_left(self, tmp_path):
        save_checkpoint(self.network, tmp_path / "model.ckpt")
        assert [p.name for p in tmp_path.iterdir()] == ["model.ckpt"]

    def test_requested_architecture_must_match(self, tmp_path):
        path = save_checkpoint(self.network, tmp_path / "model.ckpt")
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, build_architecture("pons_scale"))

    def test_unknown_architecture_needs_spec(self, tmp_path):
        path = save_checkpoint(Network(tiny_spec()), tmp_path / "tiny.ckpt")
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path)
        assert load_checkpoint(path, tiny_spec()).spec.name == "tiny"

    def test_tensor_shape_mismatch(self, tmp_path):
        path = save_checkpoint(Network(tiny_spec()), tmp_path / "tiny.ckpt")
        wider = ArchitectureSpec("tiny", (conv(3, 3, 1, "same", "relu"), flatten(), output(2)),
                                 input_length=8, num_classes=2)
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, wider)


class TestCheckpointFormat:
    def setup_method(self):
        tensors = OrderedDict([("w", np.arange(6, dtype=np.float32).reshape(2, 3)), ("s", np.float32(1.5))])
        self.blob = encode_checkpoint(Checkpoint("tiny", tensors, {"round": 1}))

    def test_decode(self):
        checkpoint = decode_checkpoint(self.blob)
        assert checkpoint.architecture == "tiny"
        assert checkpoint.tensors["w"].shape == (2, 3)
        assert checkpoint.tensors["s"].shape == ()
        assert checkpoint.metadata == {"round": 1}

    def test_header(self):
        assert self.blob[:4] == MAGIC
        assert struct.unpack("<I", self.blob[4:8]) == (1,)

    def test_bad_magic(self):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(b"RIFF" + self.blob[4:])

    def test_unsupported_version(self):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(MAGIC + struct.pack("<I", 9) + self.blob[8:])

    @pytest.mark.parametrize("cut", [3, 10, 30, -5])
    def test_truncated(self, cut):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(self.blob[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(self.blob + b"\x00")

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointFormatError):
            read_checkpoint(tmp_path / "absent.ckpt")

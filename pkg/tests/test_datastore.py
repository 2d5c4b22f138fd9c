import numpy as np
import pytest

from lungseg.datastore import (
    FormatError,
    Volume,
    load_weights,
    read_volume,
    save_weights,
    write_volume,
)
from lungseg.models import build_multires_unet, build_unet


def _volume(manufacturer="SIEMENS", n=2, size=4, fill=100):
    slices = np.full((n, size, size), fill, dtype=np.int16)
    masks = np.zeros((n, size, size), dtype=np.uint8)
    masks[0, 1, 1] = 1
    return Volume("patient_000", manufacturer, slices, masks)


class TestVolumeValidation:
    def test_unknown_manufacturer(self):
        with pytest.raises(FormatError):
            _volume(manufacturer="GE")

    def test_out_of_range_intensity(self):
        with pytest.raises(FormatError):
            Volume("p", "SIEMENS", np.full((1, 4, 4), -5, np.int16), np.zeros((1, 4, 4), np.uint8))
        with pytest.raises(FormatError):
            Volume("p", "CMS", np.full((1, 4, 4), 4000, np.int16), np.zeros((1, 4, 4), np.uint8))

    def test_cms_range_wider_than_siemens_low_end(self):
        Volume("p", "CMS", np.full((1, 4, 4), -1024, np.int16), np.zeros((1, 4, 4), np.uint8))

    def test_shape_mismatch(self):
        with pytest.raises(FormatError):
            Volume("p", "SIEMENS", np.zeros((1, 4, 4), np.int16), np.zeros((2, 4, 4), np.uint8))

    def test_non_binary_mask(self):
        masks = np.zeros((1, 4, 4), np.uint8)
        masks[0, 0, 0] = 7
        with pytest.raises(FormatError):
            Volume("p", "SIEMENS", np.zeros((1, 4, 4), np.int16), masks)


class TestVolumeRoundTrip:
    def test_bit_exact(self, tmp_path, rng):
        slices = rng.integers(0, 4096, size=(3, 8, 8)).astype(np.int16)
        masks = (rng.random((3, 8, 8)) > 0.8).astype(np.uint8)
        vol = Volume("patient_007", "SIEMENS", slices, masks)
        write_volume(vol, tmp_path / "p")
        back = read_volume(tmp_path / "p")
        assert back.patient_id == "patient_007"
        assert back.manufacturer == "SIEMENS"
        assert np.array_equal(back.slices, vol.slices)
        assert np.array_equal(back.masks, vol.masks)

    def test_payload_byte_size(self, tmp_path):
        write_volume(_volume(n=2, size=4), tmp_path / "p")
        assert (tmp_path / "p" / "slices.raw").stat().st_size == 2 * 4 * 4 * 2
        assert (tmp_path / "p" / "masks.raw").stat().st_size == 2 * 4 * 4

    def test_manifest_contents(self, tmp_path):
        write_volume(_volume(manufacturer="SIEMENS"), tmp_path / "p")
        text = (tmp_path / "p" / "manifest.txt").read_text()
        assert "manufacturer=SIEMENS" in text.splitlines()
        assert "slice_count=2" in text.splitlines()
        assert "slice_size=4" in text.splitlines()

    def test_truncated_payload_rejected(self, tmp_path):
        write_volume(_volume(), tmp_path / "p")
        raw = tmp_path / "p" / "slices.raw"
        raw.write_bytes(raw.read_bytes()[:-2])
        with pytest.raises(FormatError, match="slices.raw"):
            read_volume(tmp_path / "p")

    def test_missing_file_is_io_error(self, tmp_path):
        write_volume(_volume(), tmp_path / "p")
        (tmp_path / "p" / "masks.raw").unlink()
        with pytest.raises(FileNotFoundError):
            read_volume(tmp_path / "p")

    def test_out_of_range_for_declared_manufacturer(self, tmp_path):
        # 4000 is legal for SIEMENS but beyond the CMS ceiling of 3071.
        write_volume(_volume(manufacturer="SIEMENS", fill=4000), tmp_path / "p")
        manifest = tmp_path / "p" / "manifest.txt"
        manifest.write_text(manifest.read_text().replace("SIEMENS", "CMS"))
        with pytest.raises(FormatError, match="range"):
            read_volume(tmp_path / "p")


class TestWeightsFile:
    def test_roundtrip_restores_forward_outputs(self, tmp_path, rng):
        graph = build_unet(3, 4, seed=11)
        x = rng.random((1, 16, 16, 3)).astype(np.float32)
        before = graph.forward(x)[0].data.copy()
        save_weights(graph, tmp_path / "w.lseg")

        other = build_unet(3, 4, seed=99)
        assert not np.allclose(other.forward(x)[0].data, before)
        load_weights(tmp_path / "w.lseg", other)
        assert np.array_equal(other.forward(x)[0].data, before)
        for name, arr in graph.named_arrays().items():
            assert np.array_equal(arr, other.named_arrays()[name])

    def test_inventory_mismatch_leaves_graph_untouched(self, tmp_path):
        unet = build_unet(5, 4, seed=0)
        save_weights(unet, tmp_path / "w.lseg")
        multires = build_multires_unet(5, 4, seed=0)
        snapshot = {k: v.copy() for k, v in multires.named_arrays().items()}
        with pytest.raises(FormatError, match="inventory"):
            load_weights(tmp_path / "w.lseg", multires)
        for name, arr in multires.named_arrays().items():
            assert np.array_equal(arr, snapshot[name])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "w.lseg"
        graph = build_unet(3, 4, seed=0)
        save_weights(graph, path)
        blob = bytearray(path.read_bytes())
        blob[0:4] = b"XSEG"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            load_weights(path, graph)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "w.lseg"
        graph = build_unet(3, 4, seed=0)
        save_weights(graph, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            load_weights(path, graph)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "w.lseg"
        graph = build_unet(3, 4, seed=0)
        save_weights(graph, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            load_weights(path, graph)

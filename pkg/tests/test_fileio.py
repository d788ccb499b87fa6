import json

import numpy as np
import pytest

from fpimaging.binning import FrameSequence
from fpimaging.fields import DegenerateFieldWarning, Domain, Grid2D, ScalarField, min_max_scale
from fpimaging.fileio import (
    FORMAT_VERSION,
    load_density,
    load_field,
    load_frames,
    load_potential_image,
    read_manifest,
    save_density,
    save_field,
    save_field_image,
    save_frames,
    write_manifest,
)
from fpimaging.sde import TrajectoryFrames

DOMAIN = Domain()


def bumpy_field(grid, lo=-0.4, hi=0.3):
    xx, yy = grid.meshgrid()
    raw = np.sin(2 * xx) * np.cos(yy) + 0.3 * xx
    return ScalarField(grid, lo + (hi - lo) * (raw - raw.min()) / (raw.max() - raw.min()))


class TestPgmImages:
    def test_minmax_save_load_round_trip_within_quantization(self, tmp_path):
        grid = Grid2D(DOMAIN, 9, 7)
        field = bumpy_field(grid)
        path = tmp_path / "f.pgm"
        save_field_image(field, path)
        loaded = load_potential_image(path)
        assert loaded.grid.shape == grid.shape
        np.testing.assert_allclose(loaded.values, min_max_scale(field).values, atol=0.5 / 255)
        # orientation: the hottest pixel stays put
        assert np.unravel_index(loaded.values.argmax(), grid.shape) == np.unravel_index(
            field.values.argmax(), grid.shape
        )

    def test_unit_mode_maps_zero_one_to_full_scale(self, tmp_path):
        grid = Grid2D(DOMAIN, 2, 2)
        field = ScalarField(grid, np.array([[0.0, 1.0], [0.25, 0.5]]))
        path = tmp_path / "u.pgm"
        save_field_image(field, path, scale_mode="unit")
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        loaded = load_potential_image(path)
        assert loaded.values[0, 0] == 0.0
        assert loaded.values[0, 1] == 1.0

    def test_unit_mode_clamps_out_of_range(self, tmp_path):
        grid = Grid2D(DOMAIN, 2, 1)
        field = ScalarField(grid, np.array([[-3.0, 4.0]]))
        path = tmp_path / "c.pgm"
        save_field_image(field, path, scale_mode="unit")
        loaded = load_potential_image(path)
        assert loaded.values.tolist() == [[0.0, 1.0]]

    def test_constant_field_minmax_writes_midgray_with_warning(self, tmp_path):
        grid = Grid2D(DOMAIN, 3, 3)
        path = tmp_path / "flat.pgm"
        with pytest.warns(DegenerateFieldWarning):
            save_field_image(ScalarField.full(grid, 42.0), path)
        loaded = load_potential_image(path)
        np.testing.assert_allclose(loaded.values, 128.0 / 255.0)

    def test_bad_scale_mode_rejected(self, tmp_path):
        grid = Grid2D(DOMAIN, 2, 2)
        with pytest.raises(ValueError, match="scale_mode"):
            save_field_image(ScalarField.zeros(grid), tmp_path / "x.pgm", scale_mode="log")

    def test_all_black_image_loads_as_zeros(self, tmp_path):
        path = tmp_path / "black.pgm"
        path.write_bytes(b"P5\n4 3\n255\n" + bytes(12))
        loaded = load_potential_image(path)
        assert np.array_equal(loaded.values, np.zeros((3, 4)))

    def test_binary_extremes_map_to_unit_interval(self, tmp_path):
        path = tmp_path / "bw.pgm"
        path.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 255]))
        loaded = load_potential_image(path)
        assert loaded.values.tolist() == [[0.0, 1.0]]

    def test_image_rows_run_top_down(self, tmp_path):
        # image row 0 is the top of the domain, so it must land in the
        # last (largest-y) row of the field array
        path = tmp_path / "rows.pgm"
        path.write_bytes(b"P5\n1 2\n255\n" + bytes([255, 0]))
        loaded = load_potential_image(path)
        assert loaded.values.tolist() == [[0.0], [1.0]]

    def test_sixteen_bit_big_endian(self, tmp_path):
        path = tmp_path / "deep.pgm"
        payload = np.array([0, 65535, 32768, 1], dtype=">u2").tobytes()
        path.write_bytes(b"P5\n2 2\n65535\n" + payload)
        loaded = load_potential_image(path)
        np.testing.assert_allclose(
            loaded.values, np.array([[32768.0, 1.0], [0.0, 65535.0]]) / 65535.0
        )

    def test_ascii_pgm_with_comments(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_text("P2\n# a comment\n2 2\n# another\n255\n0 128\n255 64\n")
        loaded = load_potential_image(path)
        np.testing.assert_allclose(
            loaded.values, np.array([[255.0, 64.0], [0.0, 128.0]]) / 255.0
        )

    def test_custom_domain_attached(self, tmp_path):
        path = tmp_path / "dom.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        domain = Domain(-1.0, 1.0, -2.0, 2.0)
        loaded = load_potential_image(path, domain=domain)
        assert loaded.grid.domain == domain

    def test_color_netpbm_rejected(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
        with pytest.raises(ValueError, match="P2/P5"):
            load_potential_image(path)

    @pytest.mark.parametrize("maxval", [0, 65536])
    def test_maxval_out_of_range_rejected(self, tmp_path, maxval):
        path = tmp_path / "m.pgm"
        path.write_bytes(f"P5\n1 1\n{maxval}\n\x00".encode())
        with pytest.raises(ValueError, match="maxval"):
            load_potential_image(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 ")
        with pytest.raises(ValueError, match="truncated"):
            load_potential_image(path)

    def test_short_raster_rejected(self, tmp_path):
        path = tmp_path / "s.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(ValueError, match="raster"):
            load_potential_image(path)


class TestPngImages:
    def test_grayscale_png_round_trip(self, tmp_path):
        PIL_Image = pytest.importorskip("PIL.Image")
        pixels = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        path = tmp_path / "g.png"
        PIL_Image.fromarray(pixels, mode="L").save(path)
        loaded = load_potential_image(path)
        np.testing.assert_allclose(loaded.values, np.flipud(pixels) / 255.0)

    def test_color_png_rejected(self, tmp_path):
        PIL_Image = pytest.importorskip("PIL.Image")
        rgb = np.zeros((2, 2, 3), dtype=np.uint8)
        path = tmp_path / "c.png"
        PIL_Image.fromarray(rgb, mode="RGB").save(path)
        with pytest.raises(ValueError, match="grayscale"):
            load_potential_image(path)


class TestBinaryContainers:
    def make_traj(self, seed=0, n_frames=4, n_particles=6):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(-2.9, 2.9, size=(n_frames, n_particles, 2))
        return TrajectoryFrames(pos, 0.03, DOMAIN)

    def make_density(self, seed=1, n_frames=3, nx=5, ny=4):
        rng = np.random.default_rng(seed)
        grid = Grid2D(DOMAIN, nx, ny)
        return FrameSequence(grid, rng.uniform(0.1, 2.0, size=(n_frames, ny, nx)), 0.06)

    def test_frames_round_trip_bitwise(self, tmp_path):
        traj = self.make_traj()
        path = tmp_path / "t.bin"
        save_frames(traj, path)
        back = load_frames(path)
        assert np.array_equal(back.positions, traj.positions)
        assert back.dt == traj.dt
        assert back.domain == traj.domain

    def test_density_round_trip_bitwise(self, tmp_path):
        fs = self.make_density()
        path = tmp_path / "d.bin"
        save_density(fs, path)
        back = load_density(path)
        assert np.array_equal(back.values, fs.values)
        assert back.dt == fs.dt
        assert back.grid.shape == fs.grid.shape
        assert back.grid.domain == fs.grid.domain

    def test_field_round_trip_keeps_negative_values(self, tmp_path):
        # potentials go negative in wells; the field container must not
        # impose the density nonnegativity rule
        grid = Grid2D(DOMAIN, 6, 5)
        field = bumpy_field(grid, lo=-1.2, hi=0.4)
        assert field.values.min() < 0
        path = tmp_path / "u.bin"
        save_field(field, path)
        back = load_field(path)
        assert np.array_equal(back.values, field.values)
        assert back.grid.shape == grid.shape

    def test_load_field_rejects_multiframe_file(self, tmp_path):
        path = tmp_path / "d.bin"
        save_density(self.make_density(), path)
        with pytest.raises(ValueError, match="single-field"):
            load_field(path)

    def test_magic_mismatch_between_containers(self, tmp_path):
        tpath = tmp_path / "t.bin"
        dpath = tmp_path / "d.bin"
        save_frames(self.make_traj(), tpath)
        save_density(self.make_density(), dpath)
        with pytest.raises(ValueError, match="magic"):
            load_frames(dpath)
        with pytest.raises(ValueError, match="magic"):
            load_density(tpath)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "t.bin"
        save_frames(self.make_traj(), path)
        data = bytearray(path.read_bytes())
        data[8:12] = (FORMAT_VERSION + 1).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="version"):
            load_frames(path)

    def test_too_short_file_rejected(self, tmp_path):
        path = tmp_path / "short.bin"
        path.write_bytes(b"FPITRAJ\x00abc")
        with pytest.raises(ValueError, match="too short"):
            load_frames(path)
        with pytest.raises(ValueError, match="too short"):
            load_density(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "t.bin"
        save_frames(self.make_traj(), path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(ValueError, match="payload"):
            load_frames(path)

    def test_density_file_with_negative_values_rejected_on_load(self, tmp_path):
        fs = self.make_density()
        path = tmp_path / "d.bin"
        save_density(fs, path)
        data = bytearray(path.read_bytes())
        data[64:72] = np.float64(-0.5).tobytes()
        path.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="nonnegative"):
            load_density(path)


class TestManifests:
    def test_round_trip_and_enrichment(self, tmp_path):
        path = tmp_path / "run.json"
        record = write_manifest(path, {"command": "simulate", "seed": 7})
        back = read_manifest(path)
        assert back == record
        assert back["command"] == "simulate"
        assert back["seed"] == 7
        assert back["format_version"] == FORMAT_VERSION
        assert back["toolkit_version"]
        assert "written_at" in back

    def test_manifest_is_sorted_indented_json(self, tmp_path):
        path = tmp_path / "run.json"
        write_manifest(path, {"zeta": 1, "alpha": 2})
        text = path.read_text()
        assert text.endswith("\n")
        keys = list(json.loads(text))
        assert keys == sorted(keys)
        assert text.index('"alpha"') < text.index('"zeta"')

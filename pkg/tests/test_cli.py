import numpy as np
import pytest

from ticodec import cli, imageio
from ticodec.bitstream import decode_image_stream
from ticodec.model import ModelConfig, TICModel, save_checkpoint
from ticodec.tensor import Tensor, no_grad
from ticodec.training import synthetic_images

SMALL = ModelConfig(
    channels=16,
    main_heads=(2, 2, 2),
    hyper_heads=(2, 2),
    mlp_ratio=1.0,
    context_patch=3,
)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "model.npz"
    save_checkpoint(path, TICModel(SMALL, seed=1))
    return str(path)


@pytest.fixture(scope="module")
def image_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("img") / "toy.ppm"
    img = imageio.from_float(synthetic_images(1, 64, seed=5)[:1])
    imageio.write_image(path, img)
    return str(path)


class TestEncodeDecode:
    def test_roundtrip_files(self, checkpoint, image_file, tmp_path, capsys):
        stream_path = tmp_path / "out.tic"
        code = cli.main(
            ["encode", "--checkpoint", checkpoint, "--input", image_file,
             "--output", str(stream_path)]
        )
        assert code == 0
        printed = float(capsys.readouterr().out.strip())
        actual = 8.0 * stream_path.stat().st_size / (64 * 64)
        assert abs(printed - actual) < 5e-5  # printed with 4 decimals

        out_path = tmp_path / "recon.ppm"
        code = cli.main(
            ["decode", "--checkpoint", checkpoint, "--input", str(stream_path),
             "--output", str(out_path)]
        )
        assert code == 0
        assert capsys.readouterr().out == ""  # decode prints nothing
        recon = imageio.read_image(out_path)
        assert recon.shape == (64, 64, 3)

        # decoded file equals the encoder-side reconstruction bit-exactly
        model = cli._load_model(checkpoint)
        with open(stream_path, "rb") as fh:
            y_hat, _, orig = decode_image_stream(model, fh.read())
        with no_grad():
            x_hat = model.g_s(Tensor(y_hat)).data
        expected = imageio.from_float(
            imageio.crop_back(np.clip(x_hat, 0.0, 1.0), orig)
        )
        np.testing.assert_array_equal(recon, expected)

    def test_non_multiple_dims(self, checkpoint, tmp_path, capsys):
        img = imageio.from_float(synthetic_images(1, 64, seed=2)[:1])[:50, :60]
        src = tmp_path / "odd.ppm"
        imageio.write_image(src, img)
        stream = tmp_path / "odd.tic"
        out = tmp_path / "odd_out.ppm"
        assert cli.main(["encode", "--checkpoint", checkpoint, "--input", str(src),
                         "--output", str(stream)]) == 0
        capsys.readouterr()
        assert cli.main(["decode", "--checkpoint", checkpoint, "--input", str(stream),
                         "--output", str(out)]) == 0
        assert imageio.read_image(out).shape == (50, 60, 3)


class TestEval:
    def test_csv_format(self, checkpoint, tmp_path, capsys):
        img_dir = tmp_path / "imgs"
        img_dir.mkdir()
        for i in range(3):
            imageio.write_image(
                img_dir / f"im{i}.ppm",
                imageio.from_float(synthetic_images(1, 64, seed=i)[:1]),
            )
        csv_path = tmp_path / "report.csv"
        code = cli.main(["eval", "--checkpoint", checkpoint, "--input", str(img_dir),
                         "--csv", str(csv_path)])
        assert code == 0
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "name,bpp,psnr"
        assert len(lines) == 5  # header + 3 images + mean
        assert lines[-1].startswith("mean,")
        bpps = [float(l.split(",")[1]) for l in lines[1:4]]
        assert abs(float(lines[-1].split(",")[1]) - np.mean(bpps)) < 1e-5


class TestTrainCommand:
    def test_synthetic_train_writes_checkpoint(self, tmp_path, capsys):
        ckpt = tmp_path / "trained.npz"
        csv_path = tmp_path / "metrics.csv"
        code = cli.main(
            ["train", "--checkpoint", str(ckpt), "--preset", "tic-128-q4",
             "--channels", "16", "--steps", "2", "--synthetic", "2",
             "--crop", "64", "--batch-size", "2", "--csv", str(csv_path)]
        )
        assert code == 0
        assert ckpt.exists() and csv_path.exists()
        assert "final loss" in capsys.readouterr().out


class TestSaliencyCommand:
    def test_emits_valid_image(self, checkpoint, image_file, tmp_path):
        out = tmp_path / "map.ppm"
        code = cli.main(["saliency", "--checkpoint", checkpoint, "--input", image_file,
                         "--output", str(out), "--center", "1,2"])
        assert code == 0
        smap = imageio.read_image(out)
        assert smap.shape == (64, 64, 3)
        assert smap.max() == 255  # normalized to full scale


class TestExitCodes:
    def test_missing_checkpoint(self, image_file, tmp_path, capsys):
        code = cli.main(["encode", "--checkpoint", str(tmp_path / "none.npz"),
                         "--input", image_file, "--output", str(tmp_path / "o")])
        assert code == cli.EXIT_CHECKPOINT
        assert "ticodec:" in capsys.readouterr().err

    def test_unreadable_image(self, checkpoint, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"P6\n3 3\n255\nxx")  # truncated pixels
        code = cli.main(["encode", "--checkpoint", checkpoint, "--input", str(bad),
                         "--output", str(tmp_path / "o")])
        assert code == cli.EXIT_IMAGE

    def test_corrupt_stream(self, checkpoint, tmp_path):
        bad = tmp_path / "bad.tic"
        bad.write_bytes(b"garbage bytes, definitely not a stream")
        code = cli.main(["decode", "--checkpoint", checkpoint, "--input", str(bad),
                         "--output", str(tmp_path / "o.ppm")])
        assert code == cli.EXIT_STREAM

    def test_unknown_preset(self, tmp_path):
        code = cli.main(["train", "--checkpoint", str(tmp_path / "c.npz"),
                         "--preset", "nope", "--steps", "1"])
        assert code == 2

    def test_missing_subcommand_rejected(self):
        with pytest.raises(SystemExit):
            cli.main([])


class TestImageIO:
    def test_ppm_roundtrip(self, tmp_path):
        img = (np.arange(48).reshape(4, 4, 3) * 5).astype(np.uint8)
        path = tmp_path / "t.ppm"
        imageio.write_image(path, img)
        np.testing.assert_array_equal(imageio.read_image(path), img)

    def test_ppm_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "c.ppm"
        pixels = bytes(range(12))
        path.write_bytes(b"P6 # comment\n# another\n 2\n2 # w h\n255\n" + pixels)
        img = imageio.read_image(path)
        assert img.shape == (2, 2, 3)
        assert img.tobytes() == pixels

    def test_float_roundtrip_identity(self):
        img = np.random.default_rng(0).integers(0, 256, (5, 7, 3)).astype(np.uint8)
        np.testing.assert_array_equal(imageio.from_float(imageio.to_float(img)), img)

    @pytest.mark.parametrize("hw,want", [((256, 256), (256, 256)), ((250, 200), (256, 256)), ((3, 5), (64, 64))])
    def test_pad_reflect_and_crop(self, hw, want):
        x = np.random.default_rng(1).random((1, 3) + hw)
        padded, orig = imageio.pad_reflect(x, 64)
        assert padded.shape[2:] == want
        assert orig == hw
        np.testing.assert_array_equal(imageio.crop_back(padded, orig), x)

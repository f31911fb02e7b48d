import json

import numpy as np
import pytest

from content_probe.cli import main
from content_probe.core_io import read_raster, read_tensor, write_tensor
from content_probe.pipeline import featurize

from helpers import make_trend_fixture, write_manifest_lines


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    make_trend_fixture(root, n=30, size=48, box_lo=20, box_hi=32)
    return root


def test_help_exits_zero():
    for argv in (["--help"], ["perturb", "--help"], ["knn", "build", "--help"],
                 ["probe", "runs", "--help"], ["report", "bars", "--help"]):
        with pytest.raises(SystemExit) as exit_info:
            main(argv)
        assert exit_info.value.code == 0


def test_missing_required_flag_is_usage_error():
    with pytest.raises(SystemExit) as exit_info:
        main(["perturb", "--manifest", "x.jsonl"])  # no family/target/level/out
    assert exit_info.value.code == 2


class TestPerturbCommand:
    def test_writes_named_outputs(self, dataset, tmp_path):
        out = tmp_path / "perturbed"
        rc = main([
            "perturb", "--manifest", str(dataset / "manifest.jsonl"),
            "--family", "amount", "--target", "object", "--level", "3",
            "--seed", "9", "--out", str(out),
        ])
        assert rc == 0
        files = sorted(p.name for p in out.iterdir())
        assert len(files) == 30
        assert files[0] == "img0000__amount3_object.png"
        img = read_raster(out / files[0])
        assert img.width == 48 and img.height == 48

    def test_rerun_reproduces_bytes(self, dataset, tmp_path):
        args = [
            "perturb", "--manifest", str(dataset / "manifest.jsonl"),
            "--family", "jigsaw", "--target", "context", "--level", "2",
            "--seed", "5",
        ]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out_a)]) == 0
        assert main(args + ["--out", str(out_b)]) == 0
        name = "img0003__jigsaw2_context.png"
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_runtime_failure_exits_one(self, tmp_path):
        rc = main([
            "perturb", "--manifest", str(tmp_path / "missing.jsonl"),
            "--family", "amount", "--target", "object", "--level", "0",
            "--out", str(tmp_path / "o"),
        ])
        assert rc == 1


class TestCorrelateCommand:
    def make_maps(self, root):
        records = []
        cam_dir = root / "cam"
        pano_dir = root / "pano"
        cam_dir.mkdir()
        pano_dir.mkdir()
        # image a: cam covers 2 of pano's 8 pixels -> 0.25
        cam = np.zeros((4, 4), dtype=np.float32)
        cam[0, 0] = cam[0, 1] = 1.0
        pano = np.zeros((4, 4), dtype=np.float32)
        pano[0, :] = 1.0
        pano[1, :] = 1.0
        write_tensor(cam, cam_dir / "a__joy.f32")
        write_tensor(pano, pano_dir / "a__person.f32")
        records.append({
            "image_id": "a", "image_path": "unused.png", "bboxes": [],
            "label_counts": {"joy": 2}, "annotator_total": 2,
        })
        manifest = write_manifest_lines(root / "m.jsonl", records)
        return manifest, cam_dir, pano_dir

    def test_matrix_csv(self, tmp_path):
        manifest, cam_dir, pano_dir = self.make_maps(tmp_path)
        out = tmp_path / "matrix.csv"
        rc = main([
            "correlate", "--manifest", str(manifest), "--cam-dir", str(cam_dir),
            "--pano-dir", str(pano_dir), "--tau-cam", "0.5", "--tau-p", "0.5",
            "--out", str(out),
        ])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "class,joy"
        assert lines[1] == "person,0.250000"
        support = (tmp_path / "matrix.support.csv").read_text().splitlines()
        assert support[1] == "person,1"

    def test_missing_cam_map_fails_without_permissive(self, tmp_path):
        manifest, cam_dir, pano_dir = self.make_maps(tmp_path)
        (cam_dir / "a__joy.f32").unlink()
        rc = main([
            "correlate", "--manifest", str(manifest), "--cam-dir", str(cam_dir),
            "--pano-dir", str(pano_dir), "--out", str(tmp_path / "x.csv"),
        ])
        assert rc == 1


class TestHashtagCommands:
    def test_segment(self, tmp_path, capsys):
        (tmp_path / "dict.txt").write_text("coffee\nme\nsun\nset\n")
        (tmp_path / "tags.txt").write_text("#CoffeeMe\nsunset\nxqzt\n")
        rc = main([
            "hashtags", "segment", "--dict", str(tmp_path / "dict.txt"),
            "--in", str(tmp_path / "tags.txt"),
        ])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "#CoffeeMe\tcoffee me"
        assert lines[1] == "sunset\tsun set"
        assert lines[2] == "xqzt\t<rejected>"

    def test_embed(self, tmp_path):
        (tmp_path / "dict.txt").write_text("coffee\nme\n")
        (tmp_path / "emb.tsv").write_text("dim=2\ncoffee\t1.0\t0.0\nme\t0.0\t1.0\n")
        records = [
            {"image_id": "a", "image_path": "a.png", "bboxes": [],
             "label_counts": {"x": 1}, "annotator_total": 1, "hashtags": ["#coffeeme"]},
            {"image_id": "b", "image_path": "b.png", "bboxes": [],
             "label_counts": {"x": 1}, "annotator_total": 1, "hashtags": []},
        ]
        manifest = write_manifest_lines(tmp_path / "m.jsonl", records)
        out = tmp_path / "feats.f32"
        rc = main([
            "hashtags", "embed", "--dict", str(tmp_path / "dict.txt"),
            "--table", str(tmp_path / "emb.tsv"), "--manifest", str(manifest),
            "--out", str(out),
        ])
        assert rc == 0
        feats = read_tensor(out)
        np.testing.assert_allclose(feats, [[0.5, 0.5], [0.0, 0.0]])


class TestRetrievalCommands:
    def build_descriptors(self, tmp_path, n=12, channels=6):
        acts = tmp_path / "acts"
        acts.mkdir()
        rng = np.random.default_rng(0)
        for i in range(n):
            write_tensor(rng.random((channels, 5, 7)).astype(np.float32),
                         acts / f"item{i:02d}.f32")
        return acts

    def test_rmac_knn_roundtrip(self, tmp_path, capsys):
        acts = self.build_descriptors(tmp_path)
        desc = tmp_path / "desc.f32"
        assert main(["rmac", "--acts-dir", str(acts), "--scales", "3", "--out", str(desc)]) == 0
        ids_file = tmp_path / "desc.f32.ids"
        assert ids_file.exists()
        vectors = read_tensor(desc)
        assert vectors.shape == (12, 6)
        np.testing.assert_allclose(np.linalg.norm(vectors, axis=1), 1.0, atol=1e-5)

        index = tmp_path / "index.bin"
        assert main(["knn", "build", "--desc", str(desc), "--ids", str(ids_file),
                     "--out", str(index)]) == 0

        query = tmp_path / "q.f32"
        write_tensor(vectors[3], query)
        assert main(["knn", "query", "--index", str(index), "--query", str(query),
                     "--k", "3"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3
        first = lines[0].split("\t")
        assert first[1] == "item03"
        assert float(first[2]) == pytest.approx(1.0)

    def test_knn_link(self, tmp_path):
        acts = self.build_descriptors(tmp_path)
        desc = tmp_path / "desc.f32"
        main(["rmac", "--acts-dir", str(acts), "--out", str(desc)])
        index = tmp_path / "index.bin"
        main(["knn", "build", "--desc", str(desc), "--ids", str(tmp_path / "desc.f32.ids"),
              "--out", str(index)])
        records = [
            {"image_id": f"item{i:02d}", "image_path": "x.png", "bboxes": [],
             "label_counts": {"c": 1}, "annotator_total": 1,
             "hashtags": [f"#tag{i}", "#shared"]}
            for i in range(12)
        ]
        manifest = write_manifest_lines(tmp_path / "neighbors.jsonl", records)
        qdesc = tmp_path / "qdesc.f32"
        write_tensor(read_tensor(desc)[:2], qdesc)
        (tmp_path / "qids.txt").write_text("queryA\nqueryB\n")
        out = tmp_path / "linked.jsonl"
        rc = main(["knn", "link", "--index", str(index), "--query-desc", str(qdesc),
                   "--query-ids", str(tmp_path / "qids.txt"),
                   "--neighbors-manifest", str(manifest), "--k", "2", "--out", str(out)])
        assert rc == 0
        entries = [json.loads(line) for line in out.read_text().splitlines()]
        assert entries[0]["image_id"] == "queryA"
        assert entries[0]["neighbors"][0] == "item00"
        assert "#tag0" in entries[0]["hashtags"] and "#shared" in entries[0]["hashtags"]
        assert len(entries[0]["hashtags"]) == len(set(entries[0]["hashtags"]))


class TestProbeCommands:
    @pytest.fixture()
    def featurized(self, dataset, tmp_path):
        from content_probe.core_io import parse_manifest, read_raster

        records = parse_manifest(dataset / "manifest.jsonl")
        feats = np.vstack([
            featurize(read_raster(dataset / rec.image_path)) for rec in records
        ])
        path = tmp_path / "feats.f32"
        write_tensor(feats, path)
        return path

    def test_train_eval_runs(self, dataset, tmp_path, featurized, capsys):
        manifest = str(dataset / "manifest.jsonl")
        model = tmp_path / "model.f32"
        rc = main(["probe", "train", "--features", str(featurized), "--manifest", manifest,
                   "--epochs", "10", "--seed", "3", "--out", str(model)])
        assert rc == 0
        assert (tmp_path / "model.f32.classes").read_text().split() == [
            "amber", "cobalt", "jade", "ruby"]

        eval_csv = tmp_path / "eval.csv"
        rc = main(["probe", "eval", "--model", str(model), "--features", str(featurized),
                   "--manifest", manifest, "--out", str(eval_csv)])
        assert rc == 0
        out_lines = capsys.readouterr().out.splitlines()
        assert out_lines[-1].startswith("macro_f1\t")
        rows = eval_csv.read_text().splitlines()
        assert rows[0] == "class,f1"
        assert rows[-1].startswith("macro,")

        runs_csv = tmp_path / "runs.csv"
        rc = main(["probe", "runs", "--features", str(featurized), "--manifest", manifest,
                   "--seeds", "1,2,3", "--epochs", "8", "--out", str(runs_csv)])
        assert rc == 0
        rows = runs_csv.read_text().splitlines()
        assert rows[0] == "label,mean,std"
        assert rows[-1].startswith("macro,")
        assert len(rows) == 1 + 4 + 1

    def test_report_bars_from_runs_csv(self, tmp_path):
        runs_csv = tmp_path / "runs.csv"
        runs_csv.write_text("label,mean,std\na,0.5,0.1\nb,0.7,0.0\nmacro,0.6,0.05\n")
        svg = tmp_path / "f.svg"
        png = tmp_path / "f.png"
        rc = main(["report", "bars", "--csv", str(runs_csv), "--baseline", "0.25",
                   "--out", str(svg), "--png", str(png)])
        assert rc == 0
        assert svg.read_text().count("<rect") == 3
        assert png.exists()

    def test_report_heatgrid(self, tmp_path):
        matrix_csv = tmp_path / "matrix.csv"
        matrix_csv.write_text("class,joy,calm\nperson,0.25,\ntree,1.0,0.5\n")
        svg = tmp_path / "grid.svg"
        rc = main(["report", "heatgrid", "--matrix", str(matrix_csv), "--out", str(svg)])
        assert rc == 0
        assert "url(#absent)" in svg.read_text()


class TestPipelineCommand:
    def test_missing_manifest_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exit_info:
            main(["pipeline", "--out", str(tmp_path / "o")])
        assert exit_info.value.code == 2

    def test_config_file_with_flag_override(self, dataset, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(
            f"manifest={dataset / 'manifest.jsonl'}\n"
            f"out={tmp_path / 'ignored'}\n"
            "seed=4\nruns=2\nepochs=4\nbaseline_trials=10\nthreads=1\n"
            "families=amount\n"
        )
        out = tmp_path / "actual"
        rc = main(["pipeline", "--config", str(config), "--out", str(out)])
        assert rc == 0
        assert (out / "results.csv").exists()
        assert not (tmp_path / "ignored").exists()

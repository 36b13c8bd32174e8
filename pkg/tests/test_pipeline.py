import pytest

from iciclegcn.config import OUTPUT_FILES


class TestToyRun:
    """Behaviour of the shared seeded toy run; see conftest.toy_run."""

    def test_exit_code_and_artifacts(self, toy_run):
        assert toy_run.returncode == 0, toy_run.stderr
        assert set(OUTPUT_FILES) <= {p.name for p in toy_run.out.iterdir()}

    def test_phase1_loss_falls(self, toy_run):
        records = toy_run.records(phase=1)
        assert [r["epoch"] for r in records] == list(range(1, 31))
        assert records[-1]["total"] < records[0]["total"]

    @pytest.mark.parametrize("later", [50, 200])
    def test_phase2_loss_falls(self, toy_run, later):
        records = {r["iteration"]: r for r in toy_run.records(phase=2)}
        assert records[later]["total"] < records[1]["total"]

    def test_labels_cover_all_samples(self, toy_run):
        labels = [int(v) for v in (toy_run.out / "labels.txt").read_text().split()]
        assert len(labels) == 300 and set(labels) <= {0, 1, 2}

    def test_confusion_counts(self, toy_run):
        rows = (toy_run.out / "confusion.csv").read_text().splitlines()
        assert rows[0] == "true\\pred,0,1,2"
        assert sum(int(v) for row in rows[1:] for v in row.split(",")[1:]) == 300

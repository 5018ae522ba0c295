import numpy as np
import pytest

from gofscreen.io import (
    EVENTS_FILE,
    MANIFEST_FILE,
    SENSORS_FILE,
    DatasetFormatError,
    params_from_manifest,
    read_dataset,
    write_dataset,
)
from gofscreen.simgen import sample_dataset


@pytest.fixture
def written(tmp_path, params_low, network):
    data = sample_dataset(40, params_low, network, np.random.default_rng(50))
    write_dataset(tmp_path / "d", data, network, params_low, seed=50)
    return tmp_path / "d", data


class TestRoundTrip:
    def test_exact(self, written, params_low, network):
        path, data = written
        back, net, manifest = read_dataset(path)
        assert back == data
        assert net == network
        assert params_from_manifest(manifest) == params_low
        assert manifest["n_events"] == 40 and manifest["seed"] == 50

    def test_rewrite_is_byte_identical(self, written, tmp_path, params_low):
        path, _ = written
        data, net, _ = read_dataset(path)
        write_dataset(tmp_path / "again", data, net, params_low, seed=50)
        for name in (EVENTS_FILE, SENSORS_FILE, "network.csv"):
            assert (path / name).read_bytes() == (tmp_path / "again" / name).read_bytes()

    def test_unknown_labels(self, tmp_path, params_low, network):
        data = sample_dataset(10, params_low, network, np.random.default_rng(0))
        from gofscreen.simgen import LabeledDataset

        unl = LabeledDataset(data.detections, data.values, np.full(10, -1), data.latent, data.scenarios)
        write_dataset(tmp_path / "u", unl, network, params_low)
        back, _, _ = read_dataset(tmp_path / "u")
        assert np.all(back.labels == -1)


class TestErrors:
    def _edit(self, path, name, lineno, new):
        lines = (path / name).read_text().splitlines()
        lines[lineno - 1] = new
        (path / name).write_text("\n".join(lines) + "\n")

    def test_checksum(self, written):
        path, _ = written
        self._edit(path, EVENTS_FILE, 3, "1,1,valid,0.5,10.0,3")
        with pytest.raises(DatasetFormatError, match="checksum"):
            read_dataset(path)

    @pytest.mark.parametrize(
        "name, lineno, text, pattern",
        [
            (EVENTS_FILE, 1, "id,label", r"events\.csv:1: expected header"),
            (EVENTS_FILE, 4, "2,7,valid,0.5,10.0,3", r"events\.csv:4: label must be"),
            (SENSORS_FILE, 5, "0,3,1,abc", r"sensors\.csv:5: cannot parse"),
            (SENSORS_FILE, 6, "0,4,2,", r"sensors\.csv:6: detected must be"),
            (SENSORS_FILE, 7, "0,5", r"sensors\.csv:7: expected 4 fields"),
        ],
    )
    def test_line_numbers(self, written, name, lineno, text, pattern):
        path, _ = written
        self._edit(path, name, lineno, text)
        with pytest.raises(DatasetFormatError, match=pattern):
            read_dataset(path, verify=False)

    def test_value_on_non_detection(self, written):
        path, data = written
        s = int(np.flatnonzero(~data.detections[0])[0])
        self._edit(path, SENSORS_FILE, 2 + s, f"0,{s},0,1.0")
        with pytest.raises(DatasetFormatError, match=rf"sensors\.csv:{2 + s}: value given"):
            read_dataset(path, verify=False)

    def test_missing_file(self, written):
        path, _ = written
        (path / SENSORS_FILE).unlink()
        (path / MANIFEST_FILE).unlink()
        with pytest.raises(FileNotFoundError):
            read_dataset(path)

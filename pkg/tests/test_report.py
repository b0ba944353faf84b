import math

import pytest

from lpbd.errors import DataFormatError
from lpbd.report import format_value, parse_number, parse_report, read_report, render_report, write_report


class TestRender:
    def test_basic_layout(self):
        text = render_report({"run": {"command": "eval", "seed": 7}, "result": {"csa": 0.5}})
        assert text == (
            "# lpbd report v1\n"
            "\n"
            "[run]\n"
            "command = eval\n"
            "seed = 7\n"
            "\n"
            "[result]\n"
            "csa = 0.5\n"
        )

    def test_value_formats(self):
        assert format_value(True) == "true"
        assert format_value(False) == "false"
        assert format_value(math.inf) == "infinite"
        assert format_value(-math.inf) == "-infinite"
        assert format_value(0.1) == "0.1"
        assert format_value(3) == "3"
        assert format_value("cnn") == "cnn"

    def test_float_round_trips_exactly(self):
        value = 0.9871234567890123
        assert float(format_value(value)) == value


class TestParse:
    def test_round_trip(self, tmp_path):
        sections = {
            "run": {"command": "metrics", "a": "x.ppm"},
            "quality": {"psnr": 20.0, "ssim": 0.5, "same": False},
        }
        path = tmp_path / "r.txt"
        write_report(str(path), sections)
        back = read_report(str(path))
        assert back["run"]["command"] == "metrics"
        assert parse_number(back["quality"]["psnr"]) == 20.0
        assert back["quality"]["same"] == "false"

    def test_infinite_sentinel(self):
        text = render_report({"quality": {"psnr": math.inf}})
        back = parse_report(text)
        assert back["quality"]["psnr"] == "infinite"
        assert math.isinf(parse_number("infinite"))

    def test_missing_header_rejected(self):
        with pytest.raises(DataFormatError):
            parse_report("[run]\nseed = 1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(DataFormatError):
            parse_report("# lpbd report v1\n[run]\nnot a pair\n")

    def test_key_outside_section_rejected(self):
        with pytest.raises(DataFormatError):
            parse_report("# lpbd report v1\nseed = 1\n")

    def test_deterministic_bytes(self, tmp_path):
        sections = {"result": {"csa": 0.987654321, "asr": 1.0}}
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        write_report(str(p1), sections)
        write_report(str(p2), sections)
        assert p1.read_bytes() == p2.read_bytes()

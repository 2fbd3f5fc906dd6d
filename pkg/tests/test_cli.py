import pathlib

import pytest

from hashchain.cli import main
from hashchain.sim import ScenarioConfig, dump_config

ROOT = pathlib.Path(__file__).resolve().parents[1]
SCENARIO = ROOT / "scenarios" / "table4.toml"


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(dump_config(ScenarioConfig(speeds_mps=(8.33, 27.78), densities=(20, 40))))
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_sweep_emits_every_cell(capsys):
    code, out, _ = run(["sweep", "--config", SCENARIO], capsys)
    lines = out.strip().splitlines()
    assert code == 0
    assert lines[0] == "scheme,speed_kmh,density,mean_delay_ms,samples,dropped"
    assert len(lines) == 49


def test_run_is_repeatable(tmp_path, small, capsys):
    outs = []
    for i in range(2):
        dest = tmp_path / f"run{i}.csv"
        code, _, _ = run(["run", "--config", small, "--speed", 30, "--density", 40, "--out", dest], capsys)
        assert code == 0
        outs.append(dest.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].count(b"\n") == 3


def test_seed_override_changes_output(small, capsys):
    _, a, _ = run(["run", "--config", small, "--seed", 1], capsys)
    _, b, _ = run(["run", "--config", small, "--seed", 2], capsys)
    assert a != b


def test_run_unknown_speed(small, capsys):
    code, _, err = run(["run", "--config", small, "--speed", 55], capsys)
    assert code == 2 and "55" in err


def test_chain_verify_and_tamper(tmp_path, small, capsys):
    chain = tmp_path / "chain.bin"
    assert run(["run", "--config", small, "--density", 40, "--chain-out", chain], capsys)[0] == 0
    code, out, _ = run(["verify-chain", "--chain", chain], capsys)
    assert code == 0 and out.startswith("valid:")

    data = bytearray(chain.read_bytes())
    # flip a byte near the end, inside the last block's transactions
    data[-20] ^= 0x01
    chain.write_bytes(bytes(data))
    code, out, _ = run(["verify-chain", "--chain", chain], capsys)
    assert code == 1
    assert out.startswith("invalid: block ")


def test_verify_names_first_bad_block(tmp_path, small, capsys):
    chain = tmp_path / "chain.bin"
    run(["run", "--config", small, "--density", 40, "--chain-out", chain], capsys)
    from hashchain.ledger import Chain, encode_block, _field
    blocks = Chain.from_bytes(chain.read_bytes()).blocks
    assert len(blocks) >= 3
    raw = [bytearray(encode_block(b)) for b in blocks]
    raw[1][-5] ^= 0x10
    chain.write_bytes(b"".join(_field(bytes(r)) for r in raw))
    code, out, _ = run(["verify-chain", "--chain", chain], capsys)
    assert code == 1 and out.startswith("invalid: block 1:")


def test_empty_chain_is_valid(tmp_path, capsys):
    chain = tmp_path / "empty.bin"
    chain.write_bytes(b"")
    code, out, _ = run(["verify-chain", "--chain", chain], capsys)
    assert code == 0 and "0 blocks" in out


def test_ledger_dump_is_stable(tmp_path, small, capsys):
    chain = tmp_path / "chain.bin"
    run(["run", "--config", small, "--chain-out", chain], capsys)
    a = run(["ledger-dump", "--chain", chain], capsys)
    b = run(["ledger-dump", "--chain", chain], capsys)
    assert a == b and a[0] == 0 and a[1]


def test_broker_dump_topics(small, capsys):
    code, out, _ = run(["broker-dump", "--config", small, "--topic", "crossings"], capsys)
    assert code == 0 and out.startswith("0 ")
    code, out, _ = run(["broker-dump", "--config", small, "--topic", "blocks"], capsys)
    assert code == 0 and out
    code, _, _ = run(["broker-dump", "--config", small, "--topic", "nope"], capsys)
    assert code == 2


def test_usage_errors(tmp_path, capsys):
    assert run(["bogus"], capsys)[0] == 2
    assert run(["sweep"], capsys)[0] == 2
    assert run(["sweep", "--config", tmp_path / "missing.toml"], capsys)[0] == 3
    bad = tmp_path / "bad.toml"
    bad.write_text("sm_count = 3\n")
    assert run(["sweep", "--config", bad], capsys)[0] == 2
    bad.write_text("not toml [\n")
    assert run(["sweep", "--config", bad], capsys)[0] == 2


def test_missing_chain_file(tmp_path, capsys):
    assert run(["verify-chain", "--chain", tmp_path / "none.bin"], capsys)[0] == 3


def test_calibrate_output_loads_as_config(tmp_path, small, capsys):
    out = tmp_path / "cal.toml"
    code, _, err = run(["calibrate", "--config", small, "--out", out], capsys)
    assert code in (0, 1)
    assert "relative error" in err
    text = out.read_text()
    assert "[residuals]" in text and "[targets]" in text
    code, _, _ = run(["sweep", "--config", out], capsys)
    assert code == 0

import json
import subprocess
import sys
import urllib.request


from autonom.chain import save_chain
from autonom.cli import main

from conftest import build_chain


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_wallet_new(capsys):
    code, out, _ = run(capsys, "wallet", "new", "--seed", "beef")
    pair = json.loads(out)
    assert code == 0 and set(pair) == {"privateKey", "publicKey"}
    assert run(capsys, "wallet", "new", "--seed", "beef")[1] == out
    assert run(capsys, "wallet", "new", "--seed", "xyz")[0] == 2


def test_chain_validate_and_show(tmp_path, capsys):
    chain = build_chain(5)
    good = tmp_path / "good.json"
    save_chain(chain, good)
    assert run(capsys, "chain", "validate", str(good))[0] == 0
    code, out, _ = run(capsys, "chain", "show", str(good))
    assert code == 0 and "blocks 5" in out and "balances:" in out

    doc = chain.to_dict()
    doc["chain"][3]["transactions"][-1]["amount"] = 11
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "chain", "validate", str(bad))
    assert code == 1 and "block 3" in out
    assert run(capsys, "chain", "show", str(bad))[0] == 1
    assert run(capsys, "chain", "validate", str(tmp_path / "missing.json"))[0] == 2


def test_perf_mttr(capsys):
    code, out, _ = run(capsys, "perf", "mttr", "--lambda", "1", "--mu", "2", "--difficulty-d", "10", "--hashrate", "5")
    assert (code, out.strip()) == (0, "2.5")
    code, out, _ = run(capsys, "perf", "mttr", "--lambda", "1", "--mu", "2", "--difficulty-d", "10",
                       "--hashrate", "5", "--breakdown")
    assert json.loads(out) == {"wq": 0.5, "block_time": 2.0, "mttr": 2.5}
    code, _, err = run(capsys, "perf", "mttr", "--lambda", "2", "--mu", "2", "--difficulty-d", "1", "--hashrate", "1")
    assert code == 1 and "unstable" in err


def test_perf_sweep(tmp_path, capsys):
    out_csv = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "perf", "sweep", "--d-min", "0", "--d-max", "1", "--trials", "20", "--out", str(out_csv))
    assert code == 0 and out_csv.read_text().startswith("d,mean_attempts,mean_seconds,log_mean_seconds")
    assert run(capsys, "perf", "sweep", "--d-min", "2", "--d-max", "1")[0] == 2
    assert run(capsys, "perf", "sweep", "--d-min", "0", "--d-max", "6")[0] == 2


def test_classify_pipeline(tmp_path, capsys):
    data, model = tmp_path / "flows.csv", tmp_path / "model.json"
    assert run(capsys, "classify", "synth", "--csv", str(data), "--n", "300", "--seed", "2")[0] == 0
    code, out, _ = run(capsys, "classify", "train", "--csv", str(data), "--model", str(model))
    assert code == 0 and set(json.loads(model.read_text())) == {"version", "weights", "bias", "means", "stds", "trainedOn"}
    code, out, _ = run(capsys, "classify", "eval", "--csv", str(data), "--model", str(model))
    metrics = json.loads(out)
    assert code == 0 and metrics["accuracy"] >= 0.99 and sum(map(sum, metrics["confusion"])) == 300
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n1\n")
    assert run(capsys, "classify", "train", "--csv", str(bad), "--model", str(model))[0] == 2


def test_sim_run(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nodes": 3, "seed": 1, "trafficMix": {"benignCount": 10, "maliciousCount": 1},
                               "transferDemo": True}))
    out_file = tmp_path / "report.json"
    code, out, _ = run(capsys, "sim", "run", "--config", str(cfg), "--out", str(out_file))
    assert code == 0 and "PASS  headsConverged" in out
    assert json.loads(out_file.read_text())["ok"] is True
    cfg.write_text(json.dumps({"nodes": 0}))
    assert run(capsys, "sim", "run", "--config", str(cfg))[0] == 2


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 2
    assert run(capsys, "perf", "mttr", "--mu", "1")[0] == 2
    assert run(capsys)[0] == 2


def test_node_run_serves_api(tmp_path):
    cfg = tmp_path / "node.json"
    cfg.write_text(json.dumps({"nodeId": "n1", "seed": 3}))
    chain_file = tmp_path / "chain.json"
    proc = subprocess.Popen(
        [sys.executable, "-m", "autonom", "node", "run", "--config", str(cfg), "--bind", "127.0.0.1:0",
         "--chain", str(chain_file)],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        proc.stdout.readline()
        url = proc.stdout.readline().split()[-1]
        with urllib.request.urlopen(url + "/chain", timeout=10) as resp:
            assert len(json.loads(resp.read())["chain"]) == 1
        key = json.loads(subprocess.run([sys.executable, "-m", "autonom", "wallet", "new"], capture_output=True,
                                        text=True, check=True).stdout)["privateKey"]
        req = urllib.request.Request(url + "/mine", data=json.dumps({"key": key}).encode(), method="POST")
        with urllib.request.urlopen(req, timeout=30) as resp:
            assert resp.status == 200
        assert len(json.loads(chain_file.read_text())["chain"]) == 2
    finally:
        proc.terminate()
        proc.wait(timeout=10)

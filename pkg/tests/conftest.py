from pathlib import Path

from ikl.cli import main

# one line per acceptance criterion, printed in the terminal summary
RESULTS: dict = {}

SMALL = {
    "kernel-check": ["--d", "3", "--m", "512", "--pairs", "10", "--zero-pairs", "2"],
    "synth-benchmark": ["--d-list", "2", "--n-seeds", "1", "--n-train", "120", "--n-val", "60", "--n-test", "60",
                        "--M", "16", "--max-iters", "40", "--eval-every", "20", "--hidden", "8"],
    "gan-toy": ["--iters", "4", "--eval-every", "2", "--eval-n", "64", "--m", "32", "--batch-size", "16",
                "--gen-hidden", "8", "--critic-hidden", "8", "--sampler-hidden", "8", "--emb-dim", "4"],
    "consistency": ["--d", "2", "--n", "40", "--m-list", "8", "32", "--repeats", "3", "--m-ref", "1024",
                    "--hidden", "8"],
    "gen-data": ["--d", "3", "--n-train", "20", "--n-val", "10", "--n-test", "10"],
}


def run_cli(argv, out: Path) -> int:
    return main([*argv, "--out", str(out)])


def tree_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def record(number: int, ok: bool, detail: str):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])

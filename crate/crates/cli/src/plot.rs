pub const SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot success rate and latent error rate from a run's metrics.jsonl."""
import json
import sys

import matplotlib.pyplot as plt


def load(path):
    with open(path) as f:
        rows = [json.loads(line) for line in f if line.strip()]
    return [r for r in rows if r.get("eval")]


def main(paths):
    fig, (ax_s, ax_l) = plt.subplots(1, 2, figsize=(10, 4))
    for path in paths:
        rows = load(path)
        ep = [r["epoch"] for r in rows]
        ax_s.plot(ep, [r["eval"]["mean_train_success"] for r in rows], label=f"{path} train")
        ax_s.plot(ep, [r["eval"]["mean_test_success"] for r in rows], "--", label=f"{path} test")
        ax_l.plot(ep, [r["eval"]["ler_train"] for r in rows], label=f"{path} train")
        ax_l.plot(ep, [r["eval"]["ler_test"] for r in rows], "--", label=f"{path} test")
    ax_s.set_xlabel("epoch")
    ax_s.set_ylabel("goal success")
    ax_l.set_xlabel("epoch")
    ax_l.set_ylabel("LER")
    ax_s.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig("metrics.png", dpi=120)


if __name__ == "__main__":
    main(sys.argv[1:] or ["metrics.jsonl"])
"#;

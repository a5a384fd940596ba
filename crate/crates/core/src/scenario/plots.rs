//! Plot scripts written next to the CSVs they read. Nothing is rendered here;
//! the scripts need Python with pandas and matplotlib.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotScript {
    pub file_name: &'static str,
    pub body: String,
}

const SWEEP_TEMPLATE: &str = r##"# Reads sweep_{axis}_summary.csv written by `airan-market sweep --sweep {axis}=...`.
import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "sweep_{axis}_summary.csv"
df = pd.read_csv(path, comment="#")
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for ax, metric, label in [
    (axes[0], "total_operator_utility", "Total operator utility"),
    (axes[1], "social_welfare", "Social welfare"),
]:
    for method, g in df.groupby("method"):
        ax.plot(g["{axis}"], g[metric], marker="o", label=method)
    ax.set_xlabel("{xlabel}")
    ax.set_ylabel(label)
    ax.grid(alpha=0.3)
axes[0].legend()
fig.tight_layout()
fig.savefig("{stem}.png", dpi=150)
"##;

const CONVERGENCE: &str = r##"# Reads trace.csv written by `airan-market solve`.
import sys
import pandas as pd
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "trace.csv"
df = pd.read_csv(path)
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
axes[0].semilogy(df["k"], df["matching_residual"], label="matching")
axes[0].semilogy(df["k"], df["menu_residual"].clip(lower=1e-16), label="menu latency")
axes[0].set_xlabel("iteration")
axes[0].set_ylabel("residual")
axes[0].legend()
for col in [c for c in df.columns if c.startswith("omega_")]:
    axes[1].plot(df["k"], df[col], label=col)
axes[1].set_xlabel("iteration")
axes[1].set_ylabel("shadow price")
axes[1].legend()
fig.tight_layout()
fig.savefig("fig_convergence.png", dpi=150)
"##;

const MENUS: &str = r##"# Reads menus.json written by `airan-market solve`.
import json
import sys
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "menus.json"
with open(path) as f:
    menus = json.load(f)
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
for m, menu in enumerate(menus, start=1):
    types = [item["type_index"] for item in menu]
    axes[0].plot(types, [item["latency_s"] for item in menu], marker="o", label=f"operator {m}")
    axes[1].plot(types, [item["price_usd"] for item in menu], marker="o", label=f"operator {m}")
axes[0].set_xlabel("user type")
axes[0].set_ylabel("latency agreement (s)")
axes[1].set_xlabel("user type")
axes[1].set_ylabel("price (USD)")
axes[0].legend()
fig.tight_layout()
fig.savefig("fig_menus.png", dpi=150)
"##;

fn sweep_script(axis: &str, xlabel: &str, stem: &'static str) -> String {
    SWEEP_TEMPLATE
        .replace("{axis}", axis)
        .replace("{xlabel}", xlabel)
        .replace("{stem}", stem)
}

/// One script per figure family: convergence, menus, and one per sweep axis.
pub fn plot_scripts() -> Vec<PlotScript> {
    vec![
        PlotScript {
            file_name: "fig_convergence.py",
            body: CONVERGENCE.to_string(),
        },
        PlotScript {
            file_name: "fig_menus.py",
            body: MENUS.to_string(),
        },
        PlotScript {
            file_name: "fig_market_size.py",
            body: sweep_script("total_users", "number of users", "fig_market_size"),
        },
        PlotScript {
            file_name: "fig_user_types.py",
            body: sweep_script("num_types", "number of user types", "fig_user_types"),
        },
        PlotScript {
            file_name: "fig_refund.py",
            body: sweep_script("refund_scale", "refund scaling factor", "fig_refund"),
        },
        PlotScript {
            file_name: "fig_violation_cost.py",
            body: sweep_script(
                "violation_cost_scale",
                "violation cost scaling factor",
                "fig_violation_cost",
            ),
        },
        PlotScript {
            file_name: "fig_dirichlet.py",
            body: sweep_script("dirichlet_alpha", "Dirichlet concentration", "fig_dirichlet"),
        },
        PlotScript {
            file_name: "fig_zeta.py",
            body: sweep_script("zeta", "Chernoff fraction", "fig_zeta"),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripts_reference_their_inputs() {
        let scripts = plot_scripts();
        assert_eq!(scripts.len(), 8);
        let zeta = scripts.iter().find(|s| s.file_name == "fig_zeta.py").unwrap();
        assert!(zeta.body.contains("sweep_zeta_summary.csv"));
        assert!(zeta.body.contains("g[\"zeta\"]"));
        assert!(!scripts.iter().any(|s| s.body.contains('{') && s.body.contains("{axis}")));
    }
}

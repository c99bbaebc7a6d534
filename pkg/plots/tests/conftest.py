import numpy as np
import pandas as pd
import pytest

COLUMNS = (
    ["schema_version", "surface", "dynamics", "kf", "ambient_dim", "condition",
     "seed", "n_landmarks_requested", "n_landmarks", "n_excluded_targets",
     "rec_median", "tangent_median", "efid_median",
     "eb_median", "elam_median", "esigma_median", "sigma_min_grid"]
    + [f"extrap_0p{v:02d}" for v in (5, 10, 15, 20, 25, 30)]
    + ["radial_radius", "radial_mfpt_gt", "radial_mfpt_model", "radial_mfpt_relerr",
       "mfpt01_gt", "mfpt01_model", "mfpt01_relerr",
       "mfpt02_gt", "mfpt02_model", "mfpt02_relerr",
       "exit_fraction_gt", "exit_fraction_model", "failed"]
)


def synthetic_rows(
    conditions=("baseline", "T", "T+F"),
    seeds=(0, 1, 2),
    surface="paraboloid",
    dynamics="rotation",
    tf_dominates=True,
):
    """Rows shaped exactly like the primary CSV schema."""
    rng = np.random.default_rng(0)
    rows = []
    scale = {"baseline": 1.0, "T": 0.3, "F": 2.0, "C": 1.2, "T+F": 0.1, "atlas": 0.8}
    for cond in conditions:
        for seed in seeds:
            base = scale[cond] if tf_dominates else 1.0
            noise = 1.0 + 0.05 * rng.standard_normal()
            row = dict.fromkeys(COLUMNS, np.nan)
            row.update(
                schema_version=1,
                surface=surface,
                dynamics=dynamics,
                kf=4,
                ambient_dim=11,
                condition=cond,
                seed=seed,
                n_landmarks_requested=50,
                n_landmarks=50,
                n_excluded_targets=0,
                rec_median=0.01 * base * noise,
                tangent_median=0.03 * base * noise,
                efid_median=0.5 * base * noise,
                eb_median=3.0 * base * noise,
                elam_median=4.0 * base * noise,
                esigma_median=0.6 * base * noise,
                sigma_min_grid=0.8,
                failed=0,
            )
            if dynamics == "rotation":
                row.update(
                    radial_radius=2.0,
                    radial_mfpt_gt=1.2,
                    radial_mfpt_model=1.2 * (1 + 0.4 * base * noise),
                    radial_mfpt_relerr=0.4 * base * noise,
                )
                for k, col in enumerate(c for c in COLUMNS if c.startswith("extrap_")):
                    row[col] = 0.01 * base * (1 + k) * noise
            else:
                row.update(
                    mfpt01_gt=18.0,
                    mfpt01_model=18.0 * (1 + 0.05 * base * noise),
                    mfpt01_relerr=0.05 * base * noise,
                    mfpt02_gt=20.0,
                    mfpt02_model=20.0 * (1 + 0.04 * base * noise),
                    mfpt02_relerr=0.04 * base * noise,
                )
            rows.append(row)
    return rows


@pytest.fixture
def rotation_frame():
    df = pd.DataFrame(synthetic_rows())
    df["condition"] = pd.Categorical(
        df["condition"], categories=["baseline", "T", "T+F"], ordered=True
    )
    return df


@pytest.fixture
def results_dir(tmp_path):
    rows = synthetic_rows() + synthetic_rows(dynamics="mb", conditions=("baseline", "T+F"))
    pd.DataFrame(rows).to_csv(tmp_path / "results.csv", index=False)
    return tmp_path

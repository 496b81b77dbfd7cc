use proptest::prelude::*;

use multitask_core::acquisition::UcbParenthesization;
use multitask_core::config::{ArchSelection, RunConfig};
use multitask_core::agents::ArchitectureKind;
use multitask_core::truth::Challenge;

fn arch() -> impl Strategy<Value = ArchSelection> {
    prop_oneof![
        Just(ArchSelection::All),
        Just(ArchSelection::One(ArchitectureKind::Independent)),
        Just(ArchSelection::One(ArchitectureKind::DataSharing)),
        Just(ArchSelection::One(ArchitectureKind::DataSharingJointDm)),
    ]
}

proptest! {
    #[test]
    fn valid_configs_round_trip(
        architecture in arch(),
        two in any::<bool>(),
        m in 1usize..5,
        n in 1usize..5,
        iterations in 1usize..30,
        n_runs in 1usize..20,
        base_seed in 0u64..1_000_000,
        lambda in 0.01f64..2.0,
        alt in any::<bool>(),
        coreg in any::<bool>(),
        stock in proptest::option::of(1u64..500),
        cps in proptest::option::of((5.0f64..45.0, 55.0f64..95.0)),
    ) {
        let mut c = RunConfig {
            architecture,
            challenge: if two { Challenge::Two } else { Challenge::One },
            m,
            n,
            iterations,
            n_runs,
            base_seed,
            ucb_lambda: lambda,
            ucb_parenthesization: if alt {
                UcbParenthesization::LambdaLogOverThree
            } else {
                UcbParenthesization::default()
            },
            pm_uses_coregionalization: coreg,
            ..RunConfig::default()
        };
        c.instruments.wafer_stock = stock;
        c.ground_truth.change_points = cps;
        let text = c.to_toml();
        prop_assert_eq!(RunConfig::from_toml(&text).unwrap(), c.clone());
        let json = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn example_file_parses() {
    let text = "\
architecture = \"DataSharingJointDM\"
challenge = 2
m = 2
n = 2
iterations = 10
n_runs = 10
base_seed = 0
ucb_lambda = 0.1
output_dir = \"out\"

[inference]
n_prior_samples = 2000
n_resampled = 50
subsamples_per_draw = 5
";
    assert_eq!(RunConfig::from_toml(text).unwrap(), RunConfig::default());
}

#[test]
fn shipped_configs_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["challenge1.toml", "challenge2.toml"] {
        let c = RunConfig::load(&dir.join(name)).unwrap();
        assert_eq!(c.architecture, ArchSelection::All);
    }
}

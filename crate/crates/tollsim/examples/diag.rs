// scratch diagnostic: gap trajectories at a congested cycle
use tollsim::closed_loop::{Experiment, ScenarioConfig};
use tollsim::prediction::PredictionSettings;
use tollsim::tolls::TollSchedule;

fn main() {
    let config = ScenarioConfig::load("configs/two_route/scenario.toml").unwrap();
    let exp = Experiment::load(config).unwrap();
    // first optimizing cycle context, then push horizon into the peak by
    // reusing the machinery at higher demand levels for stress
    for level in [1.0, 1.2] {
        let ctx = exp.first_optimizing_context(level, 0).unwrap();
        let predictor = exp.predictor();
        for max_iter in [5usize, 10, 20] {
            let mut p = exp.predictor();
            let _ = &predictor;
            p.settings = PredictionSettings { eps: 0.05, max_iter };
            for toll in [0.0, 2.0] {
                let schedule = TollSchedule::uniform(ctx.t0, 300.0, 3, vec![toll]);
                let (_, _, report) = p
                    .predict_consistent(&ctx.estimated, &ctx.pred_trips, &schedule, &ctx.init_guidance, ctx.eval_seed)
                    .unwrap();
                println!(
                    "level {level} max_iter {max_iter:2} toll {toll}: gaps {:?}",
                    report.gaps.iter().map(|g| (g * 1000.0).round() / 1000.0).collect::<Vec<_>>()
                );
            }
        }
    }
}

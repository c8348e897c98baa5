use voco::eval::loss_window_means;
use voco::train::{load_dataset, select_batch, train_step, TrainConfig, TrainState};
use voco::Volume;

#[test]
fn short_run_on_a_three_by_three_grid_lowers_the_loss() {
    let config = TrainConfig {
        steps: 500,
        warmup_steps: 25,
        grid: [3, 3, 1],
        ..TrainConfig::toy()
    };
    config.validate().unwrap();
    let data = load_dataset(&config).unwrap();
    assert_eq!(data.len(), 16);
    let mut state = TrainState::new(&config).unwrap();
    while state.step < config.steps {
        let batch: Vec<Volume> = select_batch(&mut state.rng, &data, config.batch_volumes)
            .into_iter()
            .cloned()
            .collect();
        train_step(&mut state, &config, &batch).unwrap();
    }
    let (first, last) = loss_window_means(&state.history, 50);
    assert!(last < first, "{first} -> {last}");
}

//! Buffer file format at scale, and the offline collection schedule.

use oda_core::config::ExperimentConfig;
use oda_core::data::{read_buffer, task_offline_scripted, write_buffer, Buffer, DataError, Source, Transition};
use oda_core::seeding::rng_from;
use oda_core::sim::{make_task_family, ACT_DIM, OBS_DIM};
use proptest::prelude::*;
use rand::Rng;

fn awkward(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..8) {
        0 => -0.0,
        1 => f64::MIN_POSITIVE / 8.0,
        2 => f64::MAX,
        3 => -f64::EPSILON,
        _ => rng.random_range(-1e3..1e3),
    }
}

/// Episodes of 1..=100 steps spread over a few tasks.
fn random_buffer(n: usize, seed: u64) -> Buffer {
    let mut rng = rng_from(seed);
    let mut b = Buffer::new();
    let mut left = 0;
    let mut task = 0;
    let mut source = Source::Demo;
    for i in 0..n {
        if left == 0 {
            left = rng.random_range(1..=100usize).min(n - i);
            task = rng.random_range(0..5u64);
            source = [Source::Demo, Source::Rl, Source::ScriptedNoise][rng.random_range(0..3)];
        }
        left -= 1;
        let done = left == 0;
        b.push(Transition {
            s: std::array::from_fn::<_, OBS_DIM, _>(|_| awkward(&mut rng)),
            a: std::array::from_fn::<_, ACT_DIM, _>(|_| awkward(&mut rng)),
            r: if done && rng.random() { 1.0 } else { 0.0 },
            s_next: std::array::from_fn(|_| awkward(&mut rng)),
            a_next: if done { [0.0; ACT_DIM] } else { std::array::from_fn(|_| awkward(&mut rng)) },
            a_next_valid: !done,
            done,
            task_id: task,
            source,
        });
    }
    b
}

fn bits(b: &Buffer) -> Vec<u64> {
    b.transitions()
        .iter()
        .flat_map(|t| t.s.iter().chain(&t.a).chain([&t.r]).chain(&t.s_next).chain(&t.a_next).map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn hundred_thousand_transitions_round_trip_exactly() {
    let b = random_buffer(100_000, 10);
    let mut bytes = Vec::new();
    write_buffer(&b, &mut bytes).unwrap();
    let back = read_buffer(&bytes).unwrap();
    assert_eq!(back, b);
    assert_eq!(bits(&back), bits(&b));

    let mut rng = rng_from(11);
    for _ in 0..200 {
        let i = rng.random_range(0..bytes.len());
        let mut bad = bytes.clone();
        bad[i] ^= 1 << rng.random_range(0..8);
        assert!(read_buffer(&bad).is_err(), "flip at byte {i} went unnoticed");
    }
    let mut bad = bytes.clone();
    let last = bad.len() - 1;
    bad[last] = bad[last].wrapping_add(1);
    assert!(matches!(read_buffer(&bad), Err(DataError::Checksum { .. })));
}

#[test]
fn scheduled_collection_mixes_failures_and_successes() {
    let cfg = ExperimentConfig::default();
    let (train, _) = make_task_family(cfg.seed, 3, 1).unwrap();
    for t in &train {
        let buf = task_offline_scripted(t, &cfg).unwrap();
        let eps = buf.episodes(t.task_id);
        assert_eq!(eps.len(), cfg.offline_episodes);
        let wins = eps.iter().filter(|e| e.last().unwrap().r > 0.0).count();
        let frac = wins as f64 / eps.len() as f64;
        assert!(frac > 0.05 && frac < 0.95, "task {}: success fraction {frac}", t.task_id);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn small_buffers_round_trip(n in 1usize..400, seed in any::<u64>()) {
        let b = random_buffer(n, seed);
        let mut bytes = Vec::new();
        write_buffer(&b, &mut bytes).unwrap();
        prop_assert_eq!(read_buffer(&bytes).unwrap(), b);
    }
}

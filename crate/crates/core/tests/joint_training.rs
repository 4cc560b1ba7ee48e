use seal::cartpole::{cartpole_meta, CartPole};
use seal::dqn::{DqnAgent, Hyperparams};
use seal::trainer::next_phase;
use seal::{default_cartpole_spec, train, AlternationSchedule, JointMdp, Phase};

fn short_run(budget: u64, schedule: AlternationSchedule) -> (seal::TrainingLog, DqnAgent) {
    let hyper = Hyperparams {
        total_timesteps: budget,
        ..Hyperparams::default()
    };
    let mut joint = JointMdp::new(CartPole::new(4), &default_cartpole_spec(), schedule).unwrap();
    let mut agent = DqnAgent::new(4, 2, hyper, 4).unwrap();
    let log = train(&mut joint, &mut agent).unwrap();
    (log, agent)
}

#[test]
fn replay_holds_both_phases_without_cross_contamination() {
    let (log, agent) = short_run(3000, AlternationSchedule::default());
    let meta = cartpole_meta();
    let (mut main, mut marked) = (0, 0);
    for i in 0..agent.replay().len() {
        let t = agent.replay().get(i);
        if meta.contains(t.state.as_slice()) {
            main += 1;
            assert_eq!(t.reward, 1.0);
        } else {
            marked += 1;
            assert!(t.reward == 1.0 || t.reward == -1.0);
        }
    }
    assert!(main > 0 && marked > 0);
    assert_eq!((main + marked) as u64, log.total_steps());
}

#[test]
fn budget_is_overrun_by_at_most_one_episode() {
    let budget = 2500;
    let (log, _) = short_run(budget, AlternationSchedule::default());
    let last = log.records.last().unwrap();
    assert!(last.global_step >= budget);
    assert!(last.global_step - last.length < budget);
    assert!(log.records.windows(2).all(|w| w[0].global_step < w[1].global_step));
}

#[test]
fn logged_phases_follow_the_schedule() {
    let schedule = AlternationSchedule {
        main_episodes: 3,
        watermark_episodes: 2,
    };
    let (log, _) = short_run(2000, schedule);
    let mut phase = Phase::Main;
    let mut count = 0;
    for r in &log.records {
        assert_eq!(r.phase, phase, "episode {}", r.episode);
        count += 1;
        let next = next_phase(&schedule, phase, count);
        if next != phase {
            phase = next;
            count = 0;
        }
    }
    assert!(log.phase_records(Phase::Watermark).count() >= 2);
}

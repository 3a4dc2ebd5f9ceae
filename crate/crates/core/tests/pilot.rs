use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use pilot_edge::{PilotDescription, PilotError, PilotManager, PilotState, Tier};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Scale(usize),
    Submit,
    Cancel,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0usize..6).prop_map(Op::Scale),
        2 => Just(Op::Submit),
        1 => Just(Op::Cancel),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lifecycle_follows_the_state_graph(initial in 1usize..4, ops in prop::collection::vec(op(), 0..12)) {
        let manager = PilotManager::default().with_drain(Duration::from_millis(200));
        let pilot = manager.submit_pilot(PilotDescription::local(Tier::Cloud, initial)).unwrap();
        pilot.wait_running(Duration::from_secs(5)).unwrap();
        let ran = Arc::new(AtomicUsize::new(0));
        let mut submitted = 0;
        let mut workers = initial;
        let mut cancelled = false;
        for op in ops {
            match op {
                Op::Scale(n) => {
                    let got = pilot.scale(n);
                    if n == 0 {
                        prop_assert!(matches!(got, Err(PilotError::InvalidDescription(_))));
                    } else if cancelled {
                        prop_assert_eq!(got, Err(PilotError::InvalidState(PilotState::Cancelled)));
                    } else {
                        prop_assert!(got.is_ok());
                        workers = n;
                    }
                }
                Op::Submit => {
                    let r = ran.clone();
                    let got = pilot.submit(Box::new(move |_| {
                        r.fetch_add(1, Ordering::SeqCst);
                    }));
                    prop_assert_eq!(got.is_ok(), !cancelled);
                    if !cancelled {
                        submitted += 1;
                    }
                }
                Op::Cancel => {
                    prop_assert!(pilot.cancel().is_ok());
                    cancelled = true;
                    workers = 0;
                }
            }
            prop_assert_eq!(pilot.current_workers(), workers);
        }
        if !cancelled {
            prop_assert_eq!(pilot.live_workers(), workers);
            let deadline = std::time::Instant::now() + Duration::from_secs(5);
            while ran.load(Ordering::SeqCst) < submitted && std::time::Instant::now() < deadline {
                std::thread::sleep(Duration::from_millis(1));
            }
            prop_assert_eq!(ran.load(Ordering::SeqCst), submitted);
        }
        pilot.cancel().unwrap();
        // queued tasks that never started are discarded by cancel
        prop_assert!(ran.load(Ordering::SeqCst) <= submitted);
        let history = pilot.history();
        prop_assert_eq!(history[0], PilotState::Pending);
        prop_assert_eq!(*history.last().unwrap(), PilotState::Cancelled);
        for w in history.windows(2) {
            prop_assert!(w[0].can_transition_to(w[1]), "{:?} -> {:?}", w[0], w[1]);
        }
        prop_assert_eq!(history.iter().filter(|s| s.is_terminal()).count(), 1);
        prop_assert_eq!(pilot.live_workers(), 0);
    }
}

#[test]
fn scale_listeners_see_every_resize() {
    let manager = PilotManager::default();
    let pilot = manager.submit_pilot(PilotDescription::local(Tier::Edge, 1)).unwrap();
    pilot.wait_running(Duration::from_secs(5)).unwrap();
    let events = Arc::new(parking_lot::Mutex::new(Vec::new()));
    let e = events.clone();
    pilot.on_scale(move |ev| e.lock().push((ev.old_workers, ev.new_workers)));
    for n in [3, 3, 2, 5] {
        pilot.scale(n).unwrap();
    }
    assert_eq!(*events.lock(), vec![(1, 3), (3, 2), (2, 5)]);
    pilot.cancel().unwrap();
}

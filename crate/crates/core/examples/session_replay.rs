//! Answers a human-mode session by hand, writes its event log and rebuilds
//! the session from that log.

use nse_afs::envs::DomainKind;
use nse_afs::feedback::Answer;
use nse_afs::session::{read_events, write_event, FeedbackSubmission, Session, SessionConfig, SessionMode};

fn main() -> nse_afs::Result<()> {
    let mut session = Session::create("demo", SessionConfig::preset(DomainKind::Vase, 12.0, 4, SessionMode::Human))?;
    while let Ok(query) = session.next_query() {
        let d = session.domain().clone();
        // A careful human who answers approval and rank queries and declines the rest.
        let severity = |item: &nse_afs::session::ItemView, i: usize| d.nse.severity(item.state, item.actions[i].id);
        let answers: Option<Vec<Answer>> = match query.format.name() {
            "approval" | "annotated_approval" => Some(
                query
                    .items
                    .iter()
                    .map(|item| {
                        let label = severity(item, 0);
                        Answer::Approval {
                            approve: label.is_acceptable(),
                            severity: (query.format.is_annotated() && !label.is_acceptable()).then_some(label),
                        }
                    })
                    .collect(),
            ),
            "rank" => Some(
                query
                    .items
                    .iter()
                    .map(|item| match item.actions.len() {
                        1 => Answer::Approval { approve: severity(item, 0).is_acceptable(), severity: None },
                        _ => {
                            let pick = if severity(item, 1) < severity(item, 0) { 1 } else { 0 };
                            Answer::Rank { chosen: item.actions[pick].id }
                        }
                    })
                    .collect(),
            ),
            _ => None,
        };
        let submission = FeedbackSubmission {
            t: query.t,
            declined: answers.is_none(),
            format: None,
            answers: answers.unwrap_or_default(),
        };
        let summary = session.submit(submission)?;
        println!("t={} {} -> budget {:.1}, {} rows", query.t, query.format, summary.remaining_budget, summary.dataset_size);
    }

    let mut log = Vec::new();
    for e in session.events() {
        write_event(&mut log, e)?;
    }
    println!("event log: {} lines, {} bytes", session.events().len(), log.len());
    let rebuilt = Session::replay(&read_events(log.as_slice())?)?;
    assert_eq!(rebuilt.run_log(), session.run_log());
    println!("replayed session matches: {} iterations", rebuilt.run_log().len());
    Ok(())
}

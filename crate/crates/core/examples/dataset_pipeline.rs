//! Collect, thin out and normalize an offline dataset, then write it as text.

use bisimlab::dataset::{collect, dataset_from_text, dataset_to_text, remove_transitions, RemovalRule};
use bisimlab::mdp::{make_garnet, Policy};

fn main() -> bisimlab::Result<()> {
    let mdp = make_garnet(8, 2, 2, 0.0, 5)?;
    let ds = collect(&mdp, &Policy::uniform(8, 2), 500, 25, 1)?;
    let thin = remove_transitions(&ds, &RemovalRule::DropRandomNextStates(0.25), 2)?.minmax_normalize();
    println!("{} -> {} tuples, missing next states {:?}", ds.len(), thin.len(), thin.missing_next_states());
    let text = dataset_to_text(&thin);
    assert_eq!(dataset_from_text(&text)?.transitions(), thin.transitions());
    println!("{}", text.lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}

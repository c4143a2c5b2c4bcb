use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use vqai_core::eval::{append_judgment, read_judgments, JudgmentRecord};
use vqai_core::rng::{derive_seed, substream};

use super::evaluate::{EvalIndex, JUDGMENTS_FILE};
use super::load;
use crate::error::CliError;
use crate::settings::{key, Key};

pub const KEYS: &[Key] = &[
    key("eval_dir", "eval", "evaluation directory written by `evaluate`"),
    key("rater", "", "rater id stored with every judgment"),
    key("seed", "0", "seed of the per-sample candidate shuffle"),
    key("judgments", "", "judgment file; empty for <eval_dir>/judgments.jsonl"),
    key("limit", "0", "rate at most N samples this session, 0 for all"),
];

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

fn pick(text: &str, n: usize) -> Result<Vec<usize>, String> {
    let mut out = BTreeSet::new();
    for c in text.chars().filter(|c| !c.is_whitespace() && *c != ',') {
        let i = (c.to_ascii_uppercase() as u8).wrapping_sub(b'A') as usize;
        if i >= n {
            return Err(format!("`{c}` is not one of the candidates"));
        }
        out.insert(i);
    }
    Ok(out.into_iter().collect())
}

fn ask(input: &mut impl BufRead, prompt: &str) -> Result<Option<String>, CliError> {
    print!("{prompt}");
    std::io::stdout().flush().ok();
    let mut line = String::new();
    let n = input.read_line(&mut line).map_err(|e| CliError::runtime(format!("reading input: {e}")))?;
    Ok((n > 0).then(|| line.trim().to_string()))
}

/// Blinded rating session over the samples this rater has not judged yet.
pub fn rate(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let s = load("rate", KEYS, config, overrides)?;
    let rater = s.required("rater")?.to_string();
    let dir = s.path("eval_dir");
    let index = EvalIndex::read(&dir)?;
    if index.methods.is_empty() {
        return Err(CliError::data(format!("{} holds no generated images", dir.display())));
    }
    let path = match s.str("judgments") {
        "" => dir.join(JUDGMENTS_FILE),
        p => PathBuf::from(p),
    };
    let done: BTreeSet<String> = read_judgments(&path)?
        .into_iter()
        .filter(|r| r.rater == rater)
        .map(|r| r.sample_id)
        .collect();
    let seed: u64 = s.get("seed")?;
    let limit: usize = s.get("limit")?;
    let todo: Vec<_> = index.samples.iter().filter(|x| !done.contains(&x.id)).collect();
    let todo = if limit > 0 { &todo[..limit.min(todo.len())] } else { &todo[..] };
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut saved = 0;
    for (n, sample) in todo.iter().enumerate() {
        let shuffle_seed = derive_seed(seed, &format!("rate.{}", sample.id));
        let mut order: Vec<usize> = (0..index.methods.len()).collect();
        order.shuffle(&mut substream(shuffle_seed, "rate.order"));
        log::info!("sample {} shuffle seed {shuffle_seed}", sample.id);
        println!("\nSample {} ({}/{}): {}", sample.id, n + 1, todo.len(), sample.question);
        println!("  initial image: {}", dir.join(&sample.init).display());
        for (slot, &m) in order.iter().enumerate() {
            println!("  candidate {}: {}", letter(slot), dir.join(index.candidate(&index.methods[m], &sample.id, 0)).display());
        }
        let letters: String = (0..order.len()).map(letter).collect();
        let plausible = loop {
            let Some(a) = ask(&mut input, &format!("Plausible candidates ({letters}, blank for none): "))? else {
                println!("\n{saved} judgments saved to {}", path.display());
                return Ok(());
            };
            match pick(&a, order.len()) {
                Ok(p) => break p,
                Err(e) => println!("  {e}"),
            }
        };
        let best = if plausible.is_empty() {
            None
        } else {
            loop {
                let Some(a) = ask(&mut input, "Best plausible candidate (one letter, blank for none): ")? else {
                    println!("\n{saved} judgments saved to {}", path.display());
                    return Ok(());
                };
                match pick(&a, order.len()) {
                    Ok(p) if p.is_empty() => break None,
                    Ok(p) if p.len() == 1 && plausible.contains(&p[0]) => break Some(p[0]),
                    Ok(_) => println!("  choose a single candidate you marked plausible"),
                    Err(e) => println!("  {e}"),
                }
            }
        };
        let name = |slot: usize| index.methods[order[slot]].name.clone();
        let flags: BTreeMap<String, bool> = (0..order.len()).map(|slot| (name(slot), plausible.contains(&slot))).collect();
        let record = JudgmentRecord {
            rater: rater.clone(),
            sample_id: sample.id.clone(),
            plausible: flags,
            best: best.map(name),
            shown_order: (0..order.len()).map(name).collect(),
            shuffle_seed,
        };
        append_judgment(&path, &record)?;
        saved += 1;
    }
    println!("\n{saved} judgments saved to {}", path.display());
    Ok(())
}

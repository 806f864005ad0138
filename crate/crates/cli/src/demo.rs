//! Terminal session in which the person at the keyboard plays the user.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use it2p::blockworld::{generate_scene, SceneConfig};
use it2p::dialogue::{Outcome, SessionConfig};
use it2p::evaluation::success;
use it2p::heatmap::Heatmap;
use it2p::language::{Answer, Command};
use it2p::{Real, Result, Session};
use it2p_service::Models;

/// Cells per side of the ASCII heatmap previews.
const PREVIEW: usize = 16;
const RAMP: &[u8] = b" .:-=+*#%@";

#[derive(Clone, Debug)]
pub struct DemoOptions {
    pub scene_seed: u64,
    /// Hidden block; drawn from the scene seed when absent.
    pub target: Option<u32>,
    pub session: SessionConfig,
}

/// Max-pools `h` to `PREVIEW` cells per side and draws it with a fixed ramp,
/// normalized between the map's own minimum and maximum.
pub fn ascii_heatmap(h: &Heatmap<Real>) -> String {
    let k = (h.side() / PREVIEW).max(1);
    let side = h.side() / k;
    let (lo, hi) = (h.min(), h.max());
    let mut s = String::with_capacity(side * (side + 3));
    for cy in 0..side {
        s.push('|');
        for cx in 0..side {
            let mut m = Real::NEG_INFINITY;
            for y in cy * k..(cy + 1) * k {
                for x in cx * k..(cx + 1) * k {
                    m = m.max(h.get(x, y));
                }
            }
            let t = if hi > lo { ((m - lo) / (hi - lo)) as f64 } else { 0.0 };
            let i = ((t * (RAMP.len() - 1) as f64).round() as usize).min(RAMP.len() - 1);
            s.push(RAMP[i] as char);
        }
        s.push_str("|\n");
    }
    s
}

fn summarize(out: &mut impl Write, s: &Session, post: bool) -> Result<()> {
    let sfx = if post { "_post" } else { "" };
    let mp = s.heatmap(&format!("position{sfx}")).expect("estimated");
    let mu = s.heatmap(&format!("uncertainty{sfx}")).expect("estimated");
    let pick = s.latest().expect("estimated").pick;
    let (ux, uy) = mu.argmax();
    writeln!(out, "position map (peak {:.3}), pick at ({:.0}, {:.0}):", mp.max(), pick.x, pick.y)?;
    write!(out, "{}", ascii_heatmap(mp))?;
    writeln!(out, "uncertainty map (max {:.3} at cell ({ux}, {uy})):", mu.max())?;
    write!(out, "{}", ascii_heatmap(mu))?;
    Ok(())
}

/// Reads the next non-blank line after printing `prompt`; `None` on end of input.
fn prompt(input: &mut impl BufRead, out: &mut impl Write, prompt: &str) -> Result<Option<String>> {
    loop {
        write!(out, "{prompt}> ")?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(out)?;
            return Ok(None);
        }
        if !line.trim().is_empty() {
            return Ok(Some(line.trim().to_string()));
        }
    }
}

/// Runs one session. Returns `None` when the input ends early.
pub fn run(models: &Models, opts: &DemoOptions, mut input: impl BufRead, out: &mut impl Write) -> Result<Option<Outcome>> {
    let scene = generate_scene(&SceneConfig::default(), opts.scene_seed)?;
    let target = match opts.target {
        Some(t) => scene.block(t)?.id,
        None => *scene.ids().choose(&mut ChaCha8Rng::seed_from_u64(opts.scene_seed)).expect("scenes have blocks"),
    };
    writeln!(out, "scene {}: {} blocks on a {}px table", scene.seed, scene.blocks.len(), scene.image_size)?;
    for b in &scene.blocks {
        writeln!(out, "  block {}  {:<6} at ({}, {})", b.id, b.color.name(), b.x(), b.y())?;
    }
    let t = scene.block(target)?;
    writeln!(out, "you want block {target} ({}); the robot does not know which", t.color.name())?;

    let mut session = Session::new("demo", scene.clone(), Some(target), opts.session.clone())?;
    let Some(text) = prompt(&mut input, out, "command")? else { return Ok(None) };
    let command = Command::from_text(&text, &models.vocab)?;
    let unknown: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !models.vocab.contains(&w.to_lowercase()))
        .collect();
    if !unknown.is_empty() {
        writeln!(out, "unknown words read as <unk>: {}", unknown.join(", "))?;
    }
    session.submit_command(&models.t2p, command)?;
    summarize(out, &session, false)?;

    while session.can_ask() {
        let q = session.ask(&models.qgn, &models.catalog)?.clone();
        let ranked: Vec<String> = session.rounds().last().expect("asked").ranking[..5]
            .iter()
            .map(|&i| models.catalog.get(i).expect("ranked id").text.clone())
            .collect();
        writeln!(out, "robot asks: {}   (also considered: {})", q.text, ranked[1..].join(" / "))?;
        let Some(text) = prompt(&mut input, out, "answer")? else { return Ok(None) };
        let cmd = session.answer(Answer::parse(&text, &models.vocab)?, &models.vocab)?;
        writeln!(out, "command is now: {}", cmd.text)?;
        session.reestimate(&models.t2p)?;
        summarize(out, &session, true)?;
    }

    let outcome = session.finish()?;
    let pick = session.final_pick().expect("finished").xy();
    let hit = success(pick, [t.x() as f64, t.y() as f64], scene.image_size as usize);
    let dist = ((pick[0] - t.x() as f64).powi(2) + (pick[1] - t.y() as f64).powi(2)).sqrt();
    writeln!(out, "final pick ({:.0}, {:.0}), {:.1}px from block {target}: {}", pick[0], pick[1], dist, if hit { "success" } else { "miss" })?;
    Ok(Some(outcome))
}

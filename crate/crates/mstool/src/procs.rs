use std::ffi::OsString;
use std::process::{Child, Command, Output, Stdio};

use anyhow::{bail, Context};
use psm_core::comm::{free_loopback_addr, ENV_ADDR, ENV_RANK, ENV_SIZE};

/// Launches `size` copies of the running executable, one per rank, and
/// waits for all of them. With `comm` set each child gets the rendezvous
/// variables of one shared group.
pub fn spawn_ranks(size: usize, comm: bool, args: impl Fn(usize) -> Vec<OsString>) -> anyhow::Result<Vec<Output>> {
    let exe = std::env::current_exe().context("locating own executable")?;
    let addr = if comm { Some(free_loopback_addr()?) } else { None };
    let mut children: Vec<Child> = Vec::with_capacity(size);
    for rank in 0..size {
        let mut cmd = Command::new(&exe);
        cmd.args(args(rank)).stdout(Stdio::piped()).stderr(Stdio::inherit());
        match &addr {
            Some(a) => cmd.env(ENV_ADDR, a).env(ENV_RANK, rank.to_string()).env(ENV_SIZE, size.to_string()),
            None => cmd.env_remove(ENV_ADDR).env_remove(ENV_RANK).env_remove(ENV_SIZE),
        };
        match cmd.spawn() {
            Ok(c) => children.push(c),
            Err(e) => {
                for mut c in children {
                    let _ = c.kill();
                    let _ = c.wait();
                }
                return Err(e).context(format!("spawning rank {rank}"));
            }
        }
    }
    children
        .into_iter()
        .map(|c| c.wait_with_output().map_err(Into::into))
        .collect()
}

/// Stdout of every rank, or an error naming the first rank that failed.
pub fn rank_stdouts(outputs: Vec<Output>) -> anyhow::Result<Vec<String>> {
    let failed: Vec<String> = outputs
        .iter()
        .enumerate()
        .filter(|(_, o)| !o.status.success())
        .map(|(k, o)| format!("rank {k} ({})", o.status))
        .collect();
    if !failed.is_empty() {
        bail!("child process failure: {}", failed.join(", "));
    }
    Ok(outputs
        .into_iter()
        .map(|o| String::from_utf8_lossy(&o.stdout).into_owned())
        .collect())
}

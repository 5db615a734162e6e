use serde::{Deserialize, Serialize};

use crate::offload::LinkSpec;

use super::EngineError;

/// Worker 0 is always the source.
pub const SOURCE: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub name: String,
    pub num_workers: usize,
    pub links: Vec<LinkSpec>,
}

fn link(from: usize, to: usize, latency: f64, bandwidth: f64, directed: bool) -> LinkSpec {
    LinkSpec {
        from,
        to,
        latency,
        bandwidth,
        directed,
    }
}

fn complete(n: usize, latency: f64, bandwidth: f64) -> Vec<LinkSpec> {
    let mut links = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            links.push(link(a, b, latency, bandwidth, false));
        }
    }
    links
}

/// `local` (one worker), `two_node`, `mesh3`, `circular3`, `mesh5`, with
/// every link sharing one latency and bandwidth.
pub fn built_in_topology(name: &str, latency: f64, bandwidth: f64) -> Result<Topology, EngineError> {
    let (num_workers, links) = match name {
        "local" => (1, Vec::new()),
        "two_node" => (2, complete(2, latency, bandwidth)),
        "mesh3" => (3, complete(3, latency, bandwidth)),
        "mesh5" => (5, complete(5, latency, bandwidth)),
        "circular3" => (
            3,
            (0..3).map(|i| link(i, (i + 1) % 3, latency, bandwidth, true)).collect(),
        ),
        other => return Err(EngineError::UnknownTopology(other.to_string())),
    };
    Ok(Topology {
        name: name.to_string(),
        num_workers,
        links,
    })
}

impl Topology {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_workers == 0 {
            return Err("topology has no workers".into());
        }
        for l in &self.links {
            l.validate()?;
            if l.from >= self.num_workers || l.to >= self.num_workers {
                return Err(format!("link {}-{} references an unknown worker", l.from, l.to));
            }
        }
        for (i, a) in self.links.iter().enumerate() {
            if self.links[i + 1..].iter().any(|b| b.connects(a.from, a.to)) {
                return Err(format!("duplicate link between {} and {}", a.from, a.to));
            }
        }
        Ok(())
    }

    /// Links over which `n` may offload tasks, by ascending neighbor id.
    pub fn task_neighbors(&self, n: usize) -> Vec<(usize, &LinkSpec)> {
        let mut out: Vec<(usize, &LinkSpec)> = self
            .links
            .iter()
            .filter_map(|l| {
                let other = if l.from == n {
                    l.to
                } else if l.to == n {
                    l.from
                } else {
                    return None;
                };
                l.carries_tasks(n, other).then_some((other, l))
            })
            .collect();
        out.sort_by_key(|(m, _)| *m);
        out
    }

    /// Minimum-delay path cost from `from` to `to` for a message of `bytes`,
    /// using links in either direction and only workers marked in `alive`.
    pub fn path_delay(&self, from: usize, to: usize, bytes: u64, alive: &[bool]) -> Option<f64> {
        if from == to {
            return Some(0.0);
        }
        let n = self.num_workers;
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[from] = 0.0;
        for _ in 0..n {
            let u = (0..n)
                .filter(|&i| !done[i] && dist[i].is_finite())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)))?;
            if u == to {
                return Some(dist[u]);
            }
            done[u] = true;
            for l in &self.links {
                let v = if l.from == u {
                    l.to
                } else if l.to == u {
                    l.from
                } else {
                    continue;
                };
                if !alive[v] || done[v] {
                    continue;
                }
                let d = dist[u] + l.latency + bytes as f64 / l.bandwidth;
                if d < dist[v] {
                    dist[v] = d;
                }
            }
        }
        None
    }

    /// True when every worker in `alive` can reach the source.
    pub fn connected(&self, alive: &[bool]) -> bool {
        (0..self.num_workers)
            .filter(|&w| alive[w])
            .all(|w| self.path_delay(w, SOURCE, 0, alive).is_some())
    }
}

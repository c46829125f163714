//! Minute price panels, cumulative intraday return curves and a synthetic
//! price generator.
//!
//! Price CSV schema: `date,ticker,minute,price`, minute `1` being the
//! opening minute. Every (date, ticker) pair must carry the same minutes
//! `1..=N`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use afts_core::{FunctionalPanel, Grid};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const PRICE_HEADER: [&str; 4] = ["date", "ticker", "minute", "price"];

/// `prices[(t·p + j)·N + k]` for day `t`, ticker `j`, minute `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    pub minutes: usize,
    pub prices: Vec<f64>,
}

#[derive(Deserialize)]
struct PriceRow {
    date: String,
    ticker: String,
    minute: usize,
    price: f64,
}

impl PricePanel {
    pub fn n(&self) -> usize {
        self.dates.len()
    }

    pub fn p(&self) -> usize {
        self.tickers.len()
    }

    pub fn path(&self, t: usize, j: usize) -> &[f64] {
        let s = (t * self.p() + j) * self.minutes;
        &self.prices[s..s + self.minutes]
    }

    pub fn read_csv<R: Read>(input: R) -> CliResult<PricePanel> {
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != PRICE_HEADER {
            return Err(CliError::Parse(format!("price CSV header must be {PRICE_HEADER:?}, got {header:?}")));
        }
        let mut cells: BTreeMap<(String, String), BTreeMap<usize, f64>> = BTreeMap::new();
        for (i, row) in rdr.deserialize::<PriceRow>().enumerate() {
            let r = row.map_err(|e| CliError::Parse(format!("price CSV line {}: {e}", i + 2)))?;
            if r.minute == 0 {
                return Err(CliError::Data(format!("minute must start at 1 (date {}, ticker {})", r.date, r.ticker)));
            }
            let slot = cells.entry((r.date.clone(), r.ticker.clone())).or_default();
            if slot.insert(r.minute, r.price).is_some() {
                return Err(CliError::Data(format!("duplicate price for {} {} minute {}", r.date, r.ticker, r.minute)));
            }
        }
        let dates: Vec<String> = cells.keys().map(|(d, _)| d.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let tickers: Vec<String> = cells.keys().map(|(_, t)| t.clone()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let minutes = cells.values().map(|m| m.len()).max().unwrap_or(0);
        if minutes == 0 {
            return Err(CliError::Data("price file has no rows".into()));
        }
        let mut prices = Vec::with_capacity(dates.len() * tickers.len() * minutes);
        for d in &dates {
            for tk in &tickers {
                let m = cells
                    .get(&(d.clone(), tk.clone()))
                    .ok_or_else(|| CliError::Data(format!("no prices for {tk} on {d}")))?;
                for k in 1..=minutes {
                    let v = m
                        .get(&k)
                        .ok_or_else(|| CliError::Data(format!("missing price for {tk} on {d} minute {k}")))?;
                    prices.push(*v);
                }
            }
        }
        Ok(PricePanel {
            dates,
            tickers,
            minutes,
            prices,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(PRICE_HEADER)?;
        for (t, d) in self.dates.iter().enumerate() {
            for (j, tk) in self.tickers.iter().enumerate() {
                for (k, v) in self.path(t, j).iter().enumerate() {
                    w.write_record([d.as_str(), tk.as_str(), &(k + 1).to_string(), &format!("{v:.6}")])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn ticker_index(&self, ticker: &str) -> CliResult<usize> {
        self.tickers
            .iter()
            .position(|t| t == ticker)
            .ok_or_else(|| CliError::Data(format!("ticker {ticker:?} not in the price file")))
    }

    fn check_positive(&self) -> CliResult<()> {
        if let Some(pos) = self.prices.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            let m = self.minutes;
            let (t, j, k) = (pos / (self.p() * m), (pos / m) % self.p(), pos % m);
            return Err(CliError::Data(format!(
                "nonpositive price {} at t = {t} ({}), j = {j} ({}), k = {}",
                self.prices[pos],
                self.dates[t],
                self.tickers[j],
                k + 1
            )));
        }
        Ok(())
    }
}

/// `W_tj(u_k) = 100·(log P_tj(u_k) − log P_tj(u_1))` for minutes
/// `u = 0..=n_cut` (minute index `k = u + 1`), over the given tickers.
pub fn cidr_transform(prices: &PricePanel, tickers: &[usize], n_cut: usize) -> CliResult<FunctionalPanel> {
    prices.check_positive()?;
    if n_cut == 0 || n_cut + 1 > prices.minutes {
        return Err(CliError::Config(format!(
            "n_cut must lie in 1..={} for {} minutes of data, got {n_cut}",
            prices.minutes - 1,
            prices.minutes
        )));
    }
    let g = n_cut + 1;
    let grid = Grid::uniform(0.0, n_cut as f64, g)?;
    let (n, p) = (prices.n(), tickers.len());
    let mut data = Vec::with_capacity(n * p * g);
    for t in 0..n {
        for &j in tickers {
            let path = prices.path(t, j);
            let open = path[0].ln();
            data.extend(path[..g].iter().map(|v| 100.0 * (v.ln() - open)));
        }
    }
    Ok(FunctionalPanel::new(grid, n, p, data)?)
}

/// Percentage open-to-close log return of one ticker, per day.
pub fn intraday_returns(prices: &PricePanel, ticker: usize) -> CliResult<Vec<f64>> {
    prices.check_positive()?;
    Ok((0..prices.n())
        .map(|t| {
            let path = prices.path(t, ticker);
            100.0 * (path[path.len() - 1].ln() - path[0].ln())
        })
        .collect())
}

/// Synthetic minute prices for `p` stocks plus an index.
///
/// Each stock has a daily drift following an AR(1) across days plus a
/// common factor, and Gaussian minute returns. The index return on day `t`
/// is a linear functional of the first five stocks' CIDR curves plus noise;
/// its path is a Brownian bridge ending at that return.
pub fn synthetic_prices(days: usize, p: usize, minutes: usize, index_ticker: &str, seed: u64) -> PricePanel {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut z = move || -> f64 { StandardNormal.sample(&mut rng) };
    let sigma = 0.05; // per-minute sd of 100·log price
    let mut drift = vec![0.0; p];
    let mut level: Vec<f64> = (0..p).map(|j| (50.0 + 10.0 * j as f64).ln()).collect();
    let mut index_level = 1000f64.ln();
    let tickers: Vec<String> = (0..p).map(|j| format!("S{j:03}")).collect();
    let dates: Vec<String> = (0..days).map(|t| format!("d{:04}", t + 1)).collect();
    let mut stock = vec![0.0; days * p * minutes];
    let mut index = vec![0.0; days * minutes];
    let active = p.min(5);
    for t in 0..days {
        let common = z();
        let mut y = 0.0;
        for j in 0..p {
            drift[j] = 0.6 * drift[j] + 0.3 * common + 0.4 * z();
            let mut c = 0.0;
            let mut area = 0.0;
            for k in 0..minutes {
                if k > 0 {
                    c += drift[j] / minutes as f64 + sigma * z();
                }
                area += c;
                stock[(t * p + j) * minutes + k] = (level[j] + c / 100.0).exp();
            }
            if j < active {
                y += 0.4 * area / minutes as f64;
            }
            level[j] += c / 100.0;
        }
        y += 0.3 * z();
        // Brownian bridge from 0 to y
        let mut walk = vec![0.0; minutes];
        for k in 1..minutes {
            walk[k] = walk[k - 1] + sigma * z();
        }
        let last = walk[minutes - 1];
        for k in 0..minutes {
            let frac = k as f64 / (minutes - 1) as f64;
            index[t * minutes + k] = (index_level + (walk[k] - frac * last + frac * y) / 100.0).exp();
        }
        index_level += y / 100.0;
    }
    // index first, stocks after, then sort tickers to match the reader
    let mut all: Vec<(String, Vec<f64>)> = vec![(index_ticker.to_string(), index)];
    for (j, tk) in tickers.iter().enumerate() {
        let mut v = Vec::with_capacity(days * minutes);
        for t in 0..days {
            let s = (t * p + j) * minutes;
            v.extend_from_slice(&stock[s..s + minutes]);
        }
        all.push((tk.clone(), v));
    }
    all.sort_by(|a, b| a.0.cmp(&b.0));
    let mut prices = Vec::with_capacity(days * (p + 1) * minutes);
    for t in 0..days {
        for (_, v) in &all {
            prices.extend_from_slice(&v[t * minutes..(t + 1) * minutes]);
        }
    }
    PricePanel {
        dates,
        tickers: all.into_iter().map(|(tk, _)| tk).collect(),
        minutes,
        prices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize, p: usize, m: usize, v: f64) -> PricePanel {
        PricePanel {
            dates: (0..n).map(|t| format!("d{t}")).collect(),
            tickers: (0..p).map(|j| format!("T{j}")).collect(),
            minutes: m,
            prices: vec![v; n * p * m],
        }
    }

    #[test]
    fn constant_prices_give_zero_curves() {
        let panel = cidr_transform(&flat(3, 2, 11, 42.0), &[0, 1], 10).unwrap();
        assert!(panel.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_percent_move() {
        let mut p = flat(1, 1, 5, 100.0);
        p.prices[3] = 101.0;
        let panel = cidr_transform(&p, &[0], 4).unwrap();
        assert!((panel.curve_values(0, 0)[3] - 0.995_033_085_316_808_3).abs() < 1e-12);
        assert_eq!(panel.curve_values(0, 0)[0], 0.0);
    }

    #[test]
    fn nonpositive_price_names_the_cell() {
        let mut p = flat(2, 2, 4, 10.0);
        p.prices[(2 + 1) * 4 + 2] = 0.0;
        let msg = cidr_transform(&p, &[0, 1], 3).unwrap_err().to_string();
        assert!(msg.contains("t = 1") && msg.contains("j = 1") && msg.contains("k = 3"), "{msg}");
    }

    #[test]
    fn cut_beyond_data_is_rejected() {
        assert!(cidr_transform(&flat(1, 1, 5, 1.0), &[0], 5).is_err());
    }

    #[test]
    fn synthetic_round_trips_through_csv() {
        let p = synthetic_prices(4, 3, 21, "INDEX", 9);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = PricePanel::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.tickers, p.tickers);
        assert_eq!(back.dates, p.dates);
        for (a, b) in back.prices.iter().zip(&p.prices) {
            assert!((a - b).abs() <= 5e-7);
        }
        let panel = cidr_transform(&back, &[1, 2], 20).unwrap();
        for t in 0..4 {
            for j in 0..2 {
                assert_eq!(panel.curve_values(t, j)[0], 0.0);
            }
        }
    }

    #[test]
    fn missing_minute_is_data_error() {
        let csv = "date,ticker,minute,price\nd1,A,1,10\nd1,A,2,11\nd1,B,1,10\n";
        assert!(matches!(PricePanel::read_csv(csv.as_bytes()), Err(CliError::Data(_))));
    }
}

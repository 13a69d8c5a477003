use chrono::{Duration, NaiveDateTime};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsc_core::data::{generate_synthetic, SensorNetwork, SpeedMatrix, SynthConfig};
use stsc_core::neighbors::{
    rankings_csv, select_neighbors, topsis_closeness, topsis_rank, NeighborConfig, NeighborQuery, TopsisSpec,
};
use stsc_core::Error;

fn synthetic(sensors: usize, days: usize) -> (SpeedMatrix, SensorNetwork) {
    let cfg = SynthConfig {
        sensor_count: sensors,
        day_count: days,
        missing_rate: 0.0,
        outlier_rate: 0.0,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg).unwrap()
}

fn at(m: &SpeedMatrix, day: usize, hh: u32, mm: u32) -> NaiveDateTime {
    m.date_of_day(day).and_hms_opt(hh, mm, 0).unwrap()
}

/// Naive Algorithm 1: haversine from raw coordinates, the 61 readings
/// `t0 - 300 min ..= t0` read through timestamps, textbook TOPSIS.
fn brute_force(
    m: &SpeedMatrix,
    net: &SensorNetwork,
    p: &str,
    t0: NaiveDateTime,
    delta: f64,
    count: usize,
) -> Vec<String> {
    let hav = |a: (f64, f64), b: (f64, f64)| {
        let r = 6371.0f64;
        let (la1, la2) = (a.0.to_radians(), b.0.to_radians());
        let h =
            ((la2 - la1) / 2.0).sin().powi(2) + la1.cos() * la2.cos() * ((b.1 - a.1).to_radians() / 2.0).sin().powi(2);
        2.0 * r * h.sqrt().asin()
    };
    let series = |id: &str| -> Vec<f64> {
        let s = m.sensors().iter().position(|x| x == id).unwrap();
        (0..=60)
            .map(|k| m.get(m.index_of(t0 - Duration::minutes(300 - 5 * k)).unwrap(), s))
            .collect()
    };
    let pinfo = net.sensors().iter().find(|s| s.id == p).unwrap();
    let sp = series(p);
    let mut rows: Vec<(String, [f64; 3])> = Vec::new();
    for q in net.sensors() {
        let d = hav((pinfo.latitude, pinfo.longitude), (q.latitude, q.longitude));
        if d < delta || q.id == p {
            let sq = series(&q.id);
            let n = sp.len() as f64;
            let mp = sp.iter().sum::<f64>() / n;
            let mq = sq.iter().sum::<f64>() / n;
            let cov: f64 = sp.iter().zip(&sq).map(|(a, b)| (a - mp) * (b - mq)).sum();
            let vp: f64 = sp.iter().map(|a| (a - mp).powi(2)).sum();
            let vq: f64 = sq.iter().map(|b| (b - mq).powi(2)).sum();
            let corr = if vp == 0.0 || vq == 0.0 {
                0.0
            } else {
                cov / (vp * vq).sqrt()
            };
            rows.push((q.id.clone(), [corr, d, (mp - mq).abs()]));
        }
    }
    let mut v = [[0.0; 3]; 0].to_vec();
    for (_, r) in &rows {
        v.push(*r);
    }
    for j in 0..3 {
        let norm: f64 = v.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt();
        for r in v.iter_mut() {
            r[j] = if norm == 0.0 { 0.0 } else { r[j] / norm / 3.0 };
        }
    }
    let best = [
        v.iter().map(|r| r[0]).fold(f64::MIN, f64::max),
        v.iter().map(|r| r[1]).fold(f64::MAX, f64::min),
        v.iter().map(|r| r[2]).fold(f64::MAX, f64::min),
    ];
    let worst = [
        v.iter().map(|r| r[0]).fold(f64::MAX, f64::min),
        v.iter().map(|r| r[1]).fold(f64::MIN, f64::max),
        v.iter().map(|r| r[2]).fold(f64::MIN, f64::max),
    ];
    let mut scored: Vec<(String, f64)> = rows
        .iter()
        .zip(&v)
        .map(|((id, _), r)| {
            let dp = (0..3).map(|j| (r[j] - best[j]).powi(2)).sum::<f64>().sqrt();
            let dm = (0..3).map(|j| (r[j] - worst[j]).powi(2)).sum::<f64>().sqrt();
            (id.clone(), if dp + dm == 0.0 { 0.5 } else { dm / (dp + dm) })
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.into_iter().take(count).map(|(id, _)| id).collect()
}

#[test]
fn matches_brute_force_on_random_queries() {
    let (m, net) = synthetic(12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let p = format!("S{}", rng.random_range(0..12));
        let slot = rng.random_range(60..181);
        let t0 = m.time_at(rng.random_range(0..3) * 181 + slot);
        let delta = rng.random_range(0.5..8.0);
        let count = rng.random_range(1..8);
        let q = NeighborQuery {
            target: p.clone(),
            anchor: t0,
            distance_km: delta,
            history_min: 300,
            count,
        };
        let got = select_neighbors(&m, &net, &q, &TopsisSpec::default()).unwrap();
        let want = brute_force(&m, &net, &p, t0, delta, count);
        let mut a = got.selected_ids();
        let mut b = want.clone();
        assert_eq!(a.len(), b.len());
        a.sort();
        b.sort();
        assert_eq!(a, b, "query {p} at {t0} delta {delta}");
    }
}

#[test]
fn target_ranks_first_with_closeness_in_range() {
    let (m, net) = synthetic(10, 2);
    let cfg = NeighborConfig::default();
    for s in 0..10 {
        let q = NeighborQuery::new(format!("S{s}"), at(&m, 1, 15, 0), &cfg);
        let r = select_neighbors(&m, &net, &q, &cfg.topsis).unwrap();
        assert_eq!(r.ranking[0].sensor_id, format!("S{s}"));
        assert!(r.ranking.windows(2).all(|w| w[0].closeness >= w[1].closeness));
        assert!(r.ranking.iter().all(|e| (0.0..=1.0).contains(&e.closeness)));
        assert_eq!(r.selected, 10.min(r.ranking.len()));
    }
}

#[test]
fn tiny_radius_keeps_only_target() {
    let (m, net) = synthetic(5, 1);
    let q = NeighborQuery {
        target: "S2".into(),
        anchor: at(&m, 0, 12, 0),
        distance_km: 0.5,
        history_min: 300,
        count: 10,
    };
    let r = select_neighbors(&m, &net, &q, &TopsisSpec::default()).unwrap();
    assert_eq!(r.selected_ids(), vec!["S2".to_string()]);
    assert!(r.shortfall);
    assert_eq!(r.ranking[0].closeness, 0.5);
}

#[test]
fn errors() {
    let (m, net) = synthetic(3, 1);
    let cfg = NeighborConfig::default();
    let q = NeighborQuery::new("nope", at(&m, 0, 12, 0), &cfg);
    assert!(matches!(
        select_neighbors(&m, &net, &q, &cfg.topsis),
        Err(Error::NotFound(_))
    ));
    let q = NeighborQuery::new("S0", at(&m, 0, 11, 55), &cfg);
    assert!(matches!(
        select_neighbors(&m, &net, &q, &cfg.topsis),
        Err(Error::InsufficientHistory(_))
    ));
}

#[test]
fn selection_is_deterministic() {
    let (m, net) = synthetic(8, 2);
    let cfg = NeighborConfig::default();
    let q = NeighborQuery::new("S4", at(&m, 1, 17, 35), &cfg);
    let a = select_neighbors(&m, &net, &q, &cfg.topsis).unwrap();
    let b = select_neighbors(&m, &net, &q, &cfg.topsis).unwrap();
    assert_eq!(a, b);
}

#[test]
fn csv_layout() {
    let (m, net) = synthetic(3, 1);
    let cfg = NeighborConfig::default();
    let r = select_neighbors(&m, &net, &NeighborQuery::new("S1", at(&m, 0, 13, 0), &cfg), &cfg.topsis).unwrap();
    let text = String::from_utf8(rankings_csv(&[r]).unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "target,rank,sensor_id,closeness,corr,km,mean_diff"
    );
    assert!(lines.next().unwrap().starts_with("S1,1,S1,"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn cache_representative() {
    let (m, _) = synthetic(1, 1);
    let cfg = NeighborConfig {
        cache_interval_min: 60,
        ..Default::default()
    };
    assert_eq!(cfg.representative_anchor(&m, at(&m, 0, 12, 40)), Some(at(&m, 0, 12, 0)));
    assert_eq!(cfg.representative_anchor(&m, at(&m, 0, 19, 30)), Some(at(&m, 0, 19, 0)));
    let per_anchor = NeighborConfig::default();
    assert_eq!(
        per_anchor.representative_anchor(&m, at(&m, 0, 12, 40)),
        Some(at(&m, 0, 12, 40))
    );
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i:02}")).collect()
}

fn matrix_strategy(rows: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.01f64..10.0, 3), rows)
}

proptest! {
    #[test]
    fn column_scaling_preserves_ranking(m in matrix_strategy(2..9), col in 0usize..3, k in 0.01f64..100.0) {
        let spec = TopsisSpec::default();
        let a = topsis_rank(&ids(m.len()), &m, &spec).unwrap();
        let scaled: Vec<Vec<f64>> = m.iter().map(|r| { let mut r = r.clone(); r[col] *= k; r }).collect();
        let b = topsis_rank(&ids(m.len()), &scaled, &spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.1 - y.1).abs() < 1e-9);
        }
    }

    #[test]
    fn dominant_alternative_ranks_first(m in matrix_strategy(3..4), winner in 0usize..3) {
        let spec = TopsisSpec::default();
        let mut m = m;
        let best = [
            m.iter().map(|r| r[0]).fold(f64::MIN, f64::max) + 1.0,
            m.iter().map(|r| r[1]).fold(f64::MAX, f64::min) * 0.5,
            m.iter().map(|r| r[2]).fold(f64::MAX, f64::min) * 0.5,
        ];
        m[winner] = best.to_vec();
        let r = topsis_rank(&ids(3), &m, &spec).unwrap();
        prop_assert_eq!(r[0].0, winner);
    }

    #[test]
    fn closeness_in_unit_interval(m in matrix_strategy(1..12)) {
        let c = topsis_closeness(&m, &TopsisSpec::default()).unwrap();
        prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        let r = topsis_rank(&ids(m.len()), &m, &TopsisSpec::default()).unwrap();
        let mut idx: Vec<usize> = r.iter().map(|x| x.0).collect();
        idx.sort();
        prop_assert_eq!(idx, (0..m.len()).collect::<Vec<_>>());
    }

    #[test]
    fn dominated_insertion_keeps_ideal_first(m in matrix_strategy(3..9)) {
        // Row 0 plays the target: best on every criterion.
        let spec = TopsisSpec::default();
        let mut m = m;
        m[0] = vec![
            m.iter().map(|r| r[0]).fold(f64::MIN, f64::max) + 1.0,
            0.0,
            0.0,
        ];
        let worst = vec![
            m.iter().map(|r| r[0]).fold(f64::MAX, f64::min) * 0.5,
            m.iter().map(|r| r[1]).fold(f64::MIN, f64::max) * 2.0,
            m.iter().map(|r| r[2]).fold(f64::MIN, f64::max) * 2.0,
        ];
        m.push(worst);
        let r = topsis_rank(&ids(m.len()), &m, &spec).unwrap();
        prop_assert_eq!(r[0], (0, 1.0));
        prop_assert_eq!(r.last().unwrap().0, m.len() - 1);
    }
}

/// TOPSIS can reorder the remaining alternatives when a dominated one is
/// added, because the new row moves the anti-ideal point and every column
/// norm. Pinned so the behavior is visible rather than assumed away.
#[test]
fn dominated_insertion_can_reverse_ranks() {
    let m = vec![
        vec![5.535942082713301, 7.741944316672102, 9.851674507208841],
        vec![8.639075347358181, 6.880643397496675, 4.8031739851202],
        vec![8.918249113718796, 6.079229379517228, 1.1912360840300942],
        vec![6.498412709324502, 1.6282520127994033, 4.214088594779116],
        vec![2.375658928153986, 7.280994757418104, 3.735856150763425],
        vec![3.5766204384106124, 3.971796107904735, 4.866170926657246],
    ];
    let spec = TopsisSpec::default();
    let before = topsis_rank(&ids(6), &m, &spec).unwrap();
    let mut grown = m.clone();
    grown.push(vec![1.0, 15.5, 19.8]);
    let after = topsis_rank(&ids(7), &grown, &spec).unwrap();
    assert_eq!(before[0].0, 2);
    assert_eq!(after[0].0, 3);
    assert_eq!(after.last().unwrap().0, 6);
}

use crate::geo::{closer, Coord, DistanceMetric};

use super::{Field, FieldSnapshot, InterpError};

/// Targets closer than this to a station take its value verbatim.
pub const COINCIDENT_KM: f64 = 1e-9;

/// The `k` stations nearest to `target`, ordered by (distance, id).
fn nearest_k(field: &Field, target: Coord, k: usize) -> Vec<(f64, usize)> {
    let mut cand: Vec<(f64, usize)> = field
        .coords
        .iter()
        .enumerate()
        .map(|(i, c)| (field.metric.distance_unchecked(target, *c), i))
        .collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| {
        if closer(a.0, &field.ids[a.1], b.0, &field.ids[b.1]) {
            std::cmp::Ordering::Less
        } else if closer(b.0, &field.ids[b.1], a.0, &field.ids[a.1]) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    };
    let k = k.min(cand.len());
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by_rank);
        cand.truncate(k);
    }
    cand.sort_by(by_rank);
    cand
}

pub(crate) fn nn_field(field: &Field, target: Coord) -> Result<f64, InterpError> {
    target.check()?;
    nearest_k(field, target, 1)
        .first()
        .map(|&(_, i)| field.values[i])
        .ok_or(InterpError::NoData)
}

pub(crate) fn idw_field(field: &Field, target: Coord, power: f64, max_neighbors: usize) -> Result<f64, InterpError> {
    target.check()?;
    if max_neighbors == 0 {
        return Err(InterpError::Domain("IDW needs at least one neighbour".into()));
    }
    let near = nearest_k(field, target, max_neighbors);
    let Some(&(d0, i0)) = near.first() else {
        return Err(InterpError::NoData);
    };
    if d0 < COINCIDENT_KM {
        return Ok(field.values[i0]);
    }
    let raw: Vec<f64> = near.iter().map(|(d, _)| d.powf(-power)).collect();
    let total: f64 = raw.iter().sum();
    Ok(near
        .iter()
        .zip(&raw)
        .map(|((_, i), w)| (w / total) * field.values[*i])
        .sum())
}

/// Value of the nearest station with a present observation (ties by id).
pub fn nn_predict(snapshot: &FieldSnapshot, target: Coord, metric: DistanceMetric) -> Result<f64, InterpError> {
    nn_field(&Field::from_snapshot(snapshot, metric)?, target)
}

/// Inverse-distance weighted mean of the `max_neighbors` nearest present
/// stations with weights proportional to `d^-power`.
pub fn idw_predict(
    snapshot: &FieldSnapshot,
    target: Coord,
    power: f64,
    max_neighbors: usize,
    metric: DistanceMetric,
) -> Result<f64, InterpError> {
    idw_field(&Field::from_snapshot(snapshot, metric)?, target, power, max_neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Station, EARTH_RADIUS_KM};
    use approx::assert_relative_eq;

    const M: DistanceMetric = DistanceMetric::Haversine;

    fn km_to_deg(km: f64) -> f64 {
        km / EARTH_RADIUS_KM * 180.0 / std::f64::consts::PI
    }

    /// Stations on the equator at the given eastward distances (km).
    fn equator(spec: &[(&str, f64, Option<f64>)]) -> FieldSnapshot {
        let stations = spec
            .iter()
            .map(|(id, km, _)| Station::new(*id, 0.0, km_to_deg(*km), None).unwrap())
            .collect();
        FieldSnapshot::new(stations, spec.iter().map(|s| s.2).collect(), "t")
    }

    fn origin() -> Coord {
        Coord::new(0.0, 0.0).unwrap()
    }

    #[test]
    fn nn_examples() {
        let one = equator(&[("A", 50.0, Some(7.5))]);
        assert_eq!(nn_predict(&one, Coord::new(10.0, 20.0).unwrap(), M).unwrap(), 7.5);

        let two = equator(&[("A", 10.0, Some(3.0)), ("B", 20.0, Some(9.0))]);
        assert_eq!(nn_predict(&two, origin(), M).unwrap(), 3.0);
        let at_b = Coord::new(0.0, km_to_deg(20.0)).unwrap();
        assert_eq!(nn_predict(&two, at_b, M).unwrap(), 9.0);
    }

    #[test]
    fn nn_skips_missing_and_errors_without_data() {
        let snap = equator(&[("A", 10.0, None), ("B", 20.0, Some(9.0))]);
        assert_eq!(nn_predict(&snap, origin(), M).unwrap(), 9.0);
        let empty = equator(&[("A", 10.0, None)]);
        assert_eq!(nn_predict(&empty, origin(), M), Err(InterpError::NoData));
        assert_eq!(idw_predict(&empty, origin(), 2.0, 20, M), Err(InterpError::NoData));
    }

    #[test]
    fn idw_examples() {
        let snap = equator(&[("A", 1.0, Some(10.0)), ("B", 2.0, Some(20.0))]);
        // weights 1 : 1/4 -> 0.8 / 0.2
        assert_relative_eq!(idw_predict(&snap, origin(), 2.0, 20, M).unwrap(), 12.0, epsilon = 1e-9);

        let sym = equator(&[("A", -5.0, Some(4.0)), ("B", 5.0, Some(6.0))]);
        assert_relative_eq!(idw_predict(&sym, origin(), 2.0, 20, M).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn idw_respects_neighbor_cap() {
        let snap = equator(&[("A", 1.0, Some(10.0)), ("B", 2.0, Some(20.0)), ("C", 3.0, Some(1000.0))]);
        let two = idw_predict(&snap, origin(), 2.0, 2, M).unwrap();
        assert_relative_eq!(two, 12.0, epsilon = 1e-9);
        let one = idw_predict(&snap, origin(), 2.0, 1, M).unwrap();
        assert_eq!(one, 10.0);
    }

    #[test]
    fn idw_exact_at_station() {
        let snap = equator(&[("A", 1.0, Some(10.0)), ("B", 2.0, Some(20.0))]);
        let at_b = Coord::new(0.0, km_to_deg(2.0)).unwrap();
        assert_eq!(idw_predict(&snap, at_b, 2.0, 20, M).unwrap(), 20.0);
    }
}

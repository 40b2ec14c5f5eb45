//! Average travel distances of data and results.

use serde::Serialize;

use cec_core::{FlowState, Scenario};

/// Mean number of links a unit of data crosses before it is computed, and a
/// unit of result before it reaches its destination. `None` when nothing of
/// that class is sent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TravelDistance {
    pub data: Option<f64>,
    pub result: Option<f64>,
}

pub fn travel_distance(scenario: &Scenario, flows: &FlowState) -> TravelDistance {
    let mut data_links = 0.0;
    let mut result_links = 0.0;
    let mut data_in = 0.0;
    let mut result_in = 0.0;
    for (task, tf) in scenario.tasks.iter().zip(&flows.tasks) {
        data_links += tf.f_data.iter().sum::<f64>();
        result_links += tf.f_result.iter().sum::<f64>();
        data_in += task.total_rate();
        result_in += task.a * task.total_rate();
    }
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    TravelDistance { data: ratio(data_links, data_in), result: ratio(result_links, result_in) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cec_core::fixtures::{e1, e1_local_strategy, e1_optimal_strategy};
    use cec_core::{evaluate_flows, Strategy};

    #[test]
    fn e1_optimum_distances() {
        let s = e1();
        let f = evaluate_flows(&s, &e1_optimal_strategy(&s)).unwrap();
        let d = travel_distance(&s, &f);
        assert!((d.data.unwrap() - 1.0).abs() < 1e-12);
        assert!((d.result.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_computation_moves_no_data() {
        let s = e1();
        let f = evaluate_flows(&s, &e1_local_strategy(&s)).unwrap();
        assert_eq!(travel_distance(&s, &f).data, Some(0.0));
    }

    #[test]
    fn two_hop_data_path() {
        let s = e1();
        let mut st = Strategy::blank(&s);
        st.set_data_next(&s.network, 0, 0, Some(1));
        st.set_data_next(&s.network, 0, 1, Some(2));
        st.set_data_next(&s.network, 0, 2, None);
        st.set_result_next(&s.network, 0, 0, Some(2));
        st.set_result_next(&s.network, 0, 1, Some(2));
        let f = evaluate_flows(&s, &st).unwrap();
        let d = travel_distance(&s, &f);
        assert!((d.data.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(d.result, Some(0.0));
    }

    #[test]
    fn no_traffic_is_undefined() {
        let s = e1().scale_rates(0.0);
        let f = evaluate_flows(&s, &e1_local_strategy(&s)).unwrap();
        assert_eq!(travel_distance(&s, &f), TravelDistance { data: None, result: None });
    }
}

//! Property tests over the serialization, storage, allocation, and
//! sanitization layers.

use medchain_core::agents::{largest_remainder, tool_allocation_engine, tool_fairness_floor};
use medchain_core::crosslayer::{
    canonical_serialize, parse_payload, AgentInventory, AllocationSection, DrugAllocation,
    RegionAllocation, SnapshotPayload,
};
use medchain_core::ledger::{ContentStore, DisruptionEventType, DisruptionReport};
use medchain_core::policy::{
    sanitize_decision, DecisionConstraints, WireDecision, MAX_UNITS,
};
use proptest::prelude::*;

fn payload_strategy() -> impl Strategy<Value = SnapshotPayload> {
    (1usize..4, 1usize..4, 0u64..200u64).prop_flat_map(|(regions, drugs, day)| {
        let drug = (0u64..10_000, 0u64..10_000)
            .prop_map(|(allocated, demand)| DrugAllocation { allocated, demand });
        let region_rows = prop::collection::vec(
            (0.0f64..1.0, prop::collection::vec(drug, drugs)),
            regions,
        )
        .prop_map(move |rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (fairness, drugs))| RegionAllocation {
                    region: i as u32,
                    fairness,
                    drugs,
                })
                .collect::<Vec<_>>()
        });
        let produced = prop::collection::vec(0u64..10_000, drugs);
        let inventories = prop::collection::vec(0u64..100_000, drugs).prop_map(|stock| {
            vec![
                AgentInventory { agent_id: "m0".to_string(), stock: stock.clone() },
                AgentInventory { agent_id: "d0".to_string(), stock },
            ]
        });
        let disruptions = prop::collection::vec(
            (0u32..4, prop::bool::ANY).prop_map(move |(idx, delay)| DisruptionReport {
                agent_id: format!("d{idx}"),
                event_type: if delay {
                    DisruptionEventType::TransitDelay
                } else {
                    DisruptionEventType::SupplyHalt
                },
                timestamp: day,
            }),
            0..4,
        )
        .prop_map(|mut reports| {
            reports.sort();
            reports.dedup();
            reports
        });
        (region_rows, produced, inventories, disruptions).prop_map(
            move |(regions, produced, inventories, disruptions)| SnapshotPayload {
                day,
                allocations: AllocationSection { produced, regions },
                inventories,
                disruptions,
            },
        )
    })
}

proptest! {
    /// serialize -> parse -> serialize is byte-identical.
    #[test]
    fn canonical_round_trip(payload in payload_strategy()) {
        let bytes = canonical_serialize(&payload).unwrap();
        let parsed = parse_payload(&bytes).unwrap();
        let again = canonical_serialize(&parsed).unwrap();
        prop_assert_eq!(bytes, again);
    }

    /// fetch(store(p)) returns exactly p.
    #[test]
    fn store_round_trip(payload in prop::collection::vec(any::<u8>(), 0..512)) {
        let mut store = ContentStore::new();
        let cid = store.store(&payload);
        prop_assert_eq!(store.fetch(&cid).unwrap(), payload.as_slice());
        // cid is the lowercase hex sha-256, 64 chars
        prop_assert_eq!(cid.len(), 64);
        prop_assert!(cid.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    /// Integer allocations always sum to the available total.
    #[test]
    fn allocation_sums_exact(
        severity in prop::collection::vec(0.0f64..10.0, 1..8),
        alpha in 0.0f64..40.0,
        q in 0u64..1_000_000,
    ) {
        let alloc = tool_allocation_engine(&severity, alpha, q).unwrap();
        prop_assert_eq!(alloc.iter().sum::<u64>(), q);
    }

    /// The epsilon floor holds and the total is preserved.
    #[test]
    fn floor_guarantee(
        weights in prop::collection::vec(0.0f64..1.0, 2..8),
        q in 0u64..100_000,
        feasible_frac in 0.0f64..1.0,
    ) {
        let epsilon = feasible_frac / weights.len() as f64;
        let original = largest_remainder(&weights, q);
        let adjusted = tool_fairness_floor(&original, epsilon, q).unwrap();
        let floor = (epsilon * q as f64).floor() as u64;
        prop_assert_eq!(adjusted.iter().sum::<u64>(), q);
        prop_assert!(adjusted.iter().all(|&x| x >= floor));
    }

    /// Whatever the wire carries, sanitized sub-allocations are feasible.
    #[test]
    fn sanitized_suballocations_feasible(
        raw in prop::collection::vec(prop::collection::vec(any::<i64>(), 2), 3),
        inventory in prop::collection::vec(0u64..1000, 2),
        orders in prop::collection::vec(prop::collection::vec(0u64..500, 2), 3),
    ) {
        let constraints = DecisionConstraints::Distributor {
            inventory: inventory.clone(),
            orders: orders.clone(),
        };
        let wire = WireDecision::DistributorSubAllocations { per_hospital: raw };
        let (decision, _) = sanitize_decision(&wire, &constraints).unwrap();
        let medchain_core::policy::DecisionPayload::DistributorSubAllocations { per_hospital } =
            decision else { panic!("variant") };
        for d in 0..inventory.len() {
            let shipped: u64 = per_hospital.iter().map(|row| row[d]).sum();
            prop_assert!(shipped <= inventory[d], "over-shipped stock");
        }
        for (k, row) in per_hospital.iter().enumerate() {
            for (d, &q) in row.iter().enumerate() {
                prop_assert!(q <= orders[k][d], "over-shipped order");
                prop_assert!(q <= MAX_UNITS);
            }
        }
    }

    /// Sanitized manufacturer allocations never exceed available stock.
    #[test]
    fn sanitized_allocations_feasible(
        raw in prop::collection::vec(prop::collection::vec(any::<i64>(), 2), 3),
        available in prop::collection::vec(0u64..1000, 2),
    ) {
        let constraints = DecisionConstraints::Manufacturer {
            available: available.clone(),
            num_regions: 3,
        };
        let wire = WireDecision::ManufacturerAllocations { per_region: raw };
        let (decision, _) = sanitize_decision(&wire, &constraints).unwrap();
        let medchain_core::policy::DecisionPayload::ManufacturerAllocations { per_region } =
            decision else { panic!("variant") };
        for d in 0..available.len() {
            let total: u64 = per_region.iter().map(|row| row[d]).sum();
            prop_assert!(total <= available[d]);
        }
    }
}

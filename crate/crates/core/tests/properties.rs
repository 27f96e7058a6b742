use std::collections::BTreeMap;

use kvsep_core::format::{DTableBuilder, DTableOptions, DTableReader, LookupMode, MemSource, RTableBuilder, RTableOptions, RTableReader};
use kvsep_core::inherit::InheritanceMap;
use kvsep_core::merge::MergeIter;
use kvsep_core::wal::{encode_record, scan_log, WalKind};
use kvsep_core::{EntryValue, IndexEntry};
use proptest::collection::{btree_map, vec};
use proptest::prelude::*;

fn value() -> impl Strategy<Value = EntryValue> {
    prop_oneof![
        (1u64..50).prop_map(EntryValue::Reference),
        vec(any::<u8>(), 0..300).prop_map(EntryValue::Inline),
        Just(EntryValue::Tombstone),
    ]
}

fn entries() -> impl Strategy<Value = Vec<IndexEntry>> {
    btree_map(vec(any::<u8>(), 1..24), (any::<u32>(), value()), 1..300)
        .prop_map(|m| m.into_iter().map(|(k, (s, v))| IndexEntry::new(k, u64::from(s), v)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rtable_roundtrip(records in btree_map(vec(any::<u8>(), 1..32), vec(any::<u8>(), 0..2000), 1..200),
                        partition in 64usize..4096) {
        let opts = RTableOptions { partition_size: partition, ..RTableOptions::default() };
        let mut b = RTableBuilder::new(Vec::new(), opts);
        for (i, (k, v)) in records.iter().enumerate() {
            b.add(k, i as u64, v).unwrap();
        }
        let (bytes, props) = b.finish().unwrap();
        prop_assert_eq!(props.file_size, bytes.len() as u64);
        let r = RTableReader::open(MemSource::new(bytes)).unwrap();
        prop_assert_eq!(r.record_count(), records.len() as u64);
        for (k, v) in &records {
            let got = r.get(k).unwrap();
            prop_assert_eq!(got.as_ref(), Some(v));
        }
        let all: BTreeMap<_, _> = r.scan_all().unwrap().into_iter().collect();
        prop_assert_eq!(all, records);
    }

    #[test]
    fn dtable_lookup_modes(es in entries(), split in any::<bool>(), block in 128usize..4096) {
        let opts = DTableOptions { block_size: block, split, ..DTableOptions::default() };
        let mut b = DTableBuilder::new(Vec::new(), opts);
        for e in &es {
            b.add(e).unwrap();
        }
        let (bytes, props) = b.finish().unwrap();
        prop_assert_eq!(props.entry_count, es.len() as u64);
        let r = DTableReader::open(MemSource::new(bytes)).unwrap();
        for e in &es {
            let full = r.get(&e.key, LookupMode::Full).unwrap();
            prop_assert_eq!(full.as_ref(), Some(e));
            let kf = r.get(&e.key, LookupMode::KfOnly).unwrap();
            if split && !e.value.is_index_side() {
                prop_assert_eq!(kf, None);
            } else if e.value.is_index_side() {
                prop_assert_eq!(kf.as_ref(), Some(e));
            }
        }
        let scanned: Vec<IndexEntry> = r.iter().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(scanned, es);
    }

    #[test]
    fn split_kf_lookups_skip_kv_blocks(es in entries()) {
        let mut b = DTableBuilder::new(Vec::new(), DTableOptions::default());
        for e in &es {
            b.add(e).unwrap();
        }
        let (bytes, _) = b.finish().unwrap();
        let src = MemSource::new(bytes);
        let r = DTableReader::open(&src).unwrap();
        src.reset_counters();
        for e in &es {
            r.get(&e.key, LookupMode::KfOnly).unwrap();
        }
        prop_assert_eq!(src.reads(kvsep_core::format::BlockKind::KvBlock), 0);
    }

    #[test]
    fn merge_keeps_newest(streams in vec(btree_map(0u8..40, 0u64..1000, 0..30), 1..5)) {
        let mut expect: BTreeMap<u8, u64> = BTreeMap::new();
        let sources: Vec<_> = streams
            .iter()
            .map(|s| {
                for (&k, &seq) in s {
                    let e = expect.entry(k).or_insert(seq);
                    *e = (*e).max(seq);
                }
                s.iter()
                    .map(|(&k, &seq)| Ok(IndexEntry::new(vec![k], seq, EntryValue::Tombstone)))
                    .collect::<Vec<_>>()
                    .into_iter()
            })
            .collect();
        let got: Vec<(u8, u64)> = MergeIter::new(sources)
            .map(|m| m.map(|m| (m.winner.key[0], m.winner.seq)))
            .collect::<Result<_, _>>()
            .unwrap();
        prop_assert_eq!(got, expect.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn wal_torn_tail_keeps_prefix(ops in vec((vec(any::<u8>(), 1..16), vec(any::<u8>(), 0..64)), 1..40),
                                  cut in any::<prop::sample::Index>()) {
        let mut log = Vec::new();
        let mut ends = Vec::new();
        for (i, (k, v)) in ops.iter().enumerate() {
            encode_record(&mut log, i as u64 + 1, WalKind::Put, k, v);
            ends.push(log.len());
        }
        let at = cut.index(log.len() + 1);
        let scan = scan_log(&log[..at]);
        let whole = ends.iter().filter(|&&e| e <= at).count();
        prop_assert_eq!(scan.records.len(), whole);
        prop_assert_eq!(scan.torn, !ends.contains(&at) && at != 0);
        for (r, (k, v)) in scan.records.iter().zip(&ops) {
            prop_assert_eq!(&r.key, k);
            prop_assert_eq!(&r.value, v);
        }
    }

    #[test]
    fn inheritance_stays_acyclic(edits in vec((0u64..30, 0u64..30), 0..80)) {
        let mut m = InheritanceMap::new();
        for (a, b) in edits {
            let _ = m.insert(a, b);
            prop_assert!(m.is_acyclic());
        }
        let before: Vec<_> = (0..30).map(|f| m.resolve(f).unwrap()).collect();
        m.compress_all().unwrap();
        let after: Vec<_> = (0..30).map(|f| m.resolve(f).unwrap()).collect();
        prop_assert_eq!(before, after);
        for (_, new) in m.iter() {
            prop_assert_eq!(m.successor(new), None);
        }
    }
}

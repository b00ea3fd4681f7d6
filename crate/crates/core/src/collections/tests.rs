use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use tempfile::TempDir;

use super::*;
use crate::schema::{compute_layout, parse_schema, LayoutPlan};
use crate::store::{Store, Value};
use crate::tiers::{Backing, TierConfig, TierId};

fn layout(text: &str) -> Arc<LayoutPlan> {
    let s = parse_schema(text).unwrap();
    Arc::new(compute_layout(&s, &s.preferred_assignment()).unwrap())
}

fn xs() -> Arc<LayoutPlan> {
    layout("object xs { x: i32 @pmem  y: i64 @pmem  tag: string @pmem }")
}

fn volatile_store(pmem: u64) -> Store {
    Store::open(&[TierConfig::volatile("dram", 1 << 20), TierConfig::volatile("pmem", pmem)]).unwrap()
}

fn durable(dir: &TempDir) -> Store {
    Store::open(&[
        TierConfig::volatile("dram", 1 << 20),
        TierConfig::new("pmem", 8 << 20, Backing::MappedFile(dir.path().join("pmem"))),
    ])
    .unwrap()
}

#[test]
fn array_get_set() {
    let st = volatile_store(1 << 20);
    let a = DurableArray::new(&st, &xs(), 3, TierId::PMEM).unwrap();
    a.set(&st, 1, "x", 7).unwrap();
    assert_eq!(a.get(&st, 1, "x").unwrap(), Some(Value::I32(7)));
    assert_eq!(a.get(&st, 0, "x").unwrap(), Some(Value::I32(0)));
    assert_eq!(a.get(&st, 2, "tag").unwrap(), None);
    let err = a.get(&st, 3, "x").unwrap_err();
    assert!(matches!(err, CollectionError::IndexOutOfBounds { index: 3, len: 3 }));
}

#[test]
fn array_element_addresses() {
    let st = volatile_store(1 << 20);
    let l = xs();
    let a = DurableArray::new(&st, &l, 50, TierId::PMEM).unwrap();
    let base = a.element(0).unwrap().root.offset() + l.entry("y").unwrap().offset as u64;
    for i in 0..50 {
        let addr = a.element(i).unwrap().root.offset() + l.entry("y").unwrap().offset as u64;
        assert_eq!(addr - base, i * l.record_size as u64);
    }
    let empty = DurableArray::new(&st, &l, 0, TierId::PMEM).unwrap();
    assert!(empty.is_empty());
    assert!(DurableArray::open(&st, empty.header(), &l).unwrap().is_empty());
}

#[test]
fn array_capacity() {
    let st = volatile_store(1000);
    let err = DurableArray::new(&st, &xs(), 100, TierId::PMEM).unwrap_err();
    assert!(err.is_capacity(), "{err}");
    assert_eq!(st.usage(TierId::PMEM).unwrap().used, 0);
}

#[test]
fn map_basics() {
    let st = volatile_store(1 << 20);
    let l = xs();
    let mut m = DurableMap::new(&st, &l, TierId::PMEM).unwrap();
    let v = st.create_object(&l).unwrap();
    st.set_field(&v, "x", 5).unwrap();
    assert_eq!(m.put(&st, b"k", &v).unwrap(), None);
    let got = m.get(&st, b"k").unwrap().unwrap();
    assert_eq!(got.root, v.root);
    assert_eq!(st.get_field(&got, "x").unwrap(), Some(Value::I32(5)));
    assert!(m.get(&st, b"absent").unwrap().is_none());
    assert!(m.get(&st, b"").unwrap().is_none());

    let w = st.create_object(&l).unwrap();
    assert_eq!(m.put(&st, b"k", &w).unwrap(), Some(v.root));
    assert_eq!(m.len(), 1);
    assert!(m.delete(&st, b"k").unwrap());
    assert!(!m.delete(&st, b"k").unwrap());
    assert!(m.is_empty());
}

#[test]
fn map_resizes_under_load_factor() {
    let st = volatile_store(1 << 22);
    let l = xs();
    let v = st.create_object(&l).unwrap();
    let mut m = DurableMap::new(&st, &l, TierId::PMEM).unwrap();
    for i in 0..1000u32 {
        m.put(&st, &i.to_le_bytes(), &v).unwrap();
        assert!(m.len() * 4 <= m.bucket_count() * 3);
    }
    assert_eq!(m.bucket_count(), 2048);
    assert_eq!(m.entries(&st).unwrap().len(), 1000);
    for i in 0..1000u32 {
        assert!(m.contains_key(&st, &i.to_le_bytes()).unwrap());
    }
}

#[test]
fn map_delete_releases_space() {
    let st = volatile_store(1 << 20);
    let l = xs();
    let v = st.create_object(&l).unwrap();
    let mut m = DurableMap::new(&st, &l, TierId::PMEM).unwrap();
    let used = st.usage(TierId::PMEM).unwrap().used;
    for i in 0..10u8 {
        m.put(&st, &[i; 5], &v).unwrap();
    }
    for i in 0..10u8 {
        assert!(m.delete(&st, &[i; 5]).unwrap());
    }
    assert_eq!(st.usage(TierId::PMEM).unwrap().used, used);
}

#[test]
fn map_capacity_error() {
    let st = volatile_store(700);
    let l = xs();
    let v = st.create_object(&l).unwrap();
    let mut m = DurableMap::new(&st, &l, TierId::PMEM).unwrap();
    let mut i = 0u32;
    let err = loop {
        match m.put(&st, &i.to_le_bytes(), &v) {
            Ok(_) => i += 1,
            Err(e) => break e,
        }
    };
    assert!(err.is_capacity(), "{err}");
    assert_eq!(m.len(), i as u64);
    for k in 0..i {
        assert!(m.contains_key(&st, &k.to_le_bytes()).unwrap());
    }
}

#[test]
fn map_and_array_survive_reopen() {
    let dir = TempDir::new().unwrap();
    let l = xs();
    let mut expected = Vec::new();
    {
        let st = durable(&dir);
        let mut m = DurableMap::new(&st, &l, TierId::PMEM).unwrap();
        let arr = DurableArray::new(&st, &l, 4, TierId::PMEM).unwrap();
        arr.set(&st, 3, "tag", "last").unwrap();
        let mut seed = 0x2545_F491_4F6C_DD1Du64;
        for i in 0..1000i64 {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            let key = seed.to_le_bytes()[..(1 + (seed % 8) as usize)].to_vec();
            let v = st.create_object(&l).unwrap();
            st.set_field(&v, "y", i).unwrap();
            if m.put(&st, &key, &v).unwrap().is_none() {
                expected.push((key, i));
            } else {
                expected.iter_mut().find(|(k, _)| *k == key).unwrap().1 = i;
            }
        }
        st.set_root(TierId::PMEM, m.header()).unwrap();
        // the array header is reachable through a map value's root
        let holder = st.create_object(&l).unwrap();
        st.set_field(&holder, "y", arr.header().raw() as i64).unwrap();
        m.put(&st, b"__array", &holder).unwrap();
        st.sync().unwrap();
    }
    let st = durable(&dir);
    let m = DurableMap::open(&st, st.root(TierId::PMEM).unwrap(), &l).unwrap();
    assert_eq!(m.len(), expected.len() as u64 + 1);
    for (k, i) in &expected {
        let v = m.get(&st, k).unwrap().unwrap();
        assert_eq!(st.get_field(&v, "y").unwrap(), Some(Value::I64(*i)));
    }
    let holder = m.get(&st, b"__array").unwrap().unwrap();
    let raw = st.get_field(&holder, "y").unwrap().unwrap().as_i64().unwrap() as u64;
    let arr = DurableArray::open(&st, crate::tiers::Handle::from_raw(raw), &l).unwrap();
    assert_eq!(arr.len(), 4);
    assert_eq!(arr.get(&st, 3, "tag").unwrap(), Some(Value::Str("last".into())));
}

#[derive(Debug, Clone)]
enum MapOp {
    Put(Vec<u8>),
    Get(Vec<u8>),
    Delete(Vec<u8>),
}

fn key() -> impl Strategy<Value = Vec<u8>> {
    (0u16..600).prop_map(|k| {
        let mut v = k.to_le_bytes().to_vec();
        v.truncate(1 + (k % 2) as usize);
        v
    })
}

fn map_op() -> impl Strategy<Value = MapOp> {
    prop_oneof![
        3 => key().prop_map(MapOp::Put),
        2 => key().prop_map(MapOp::Get),
        2 => key().prop_map(MapOp::Delete),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 3, max_shrink_iters: 64, ..ProptestConfig::default() })]

    #[test]
    fn map_matches_reference(ops in proptest::collection::vec(map_op(), 10_000)) {
        let st = volatile_store(1 << 22);
        let l = layout("object v { n: i64 @pmem }");
        let values: Vec<_> = (0..8).map(|_| st.create_object(&l).unwrap()).collect();
        let mut m = DurableMap::new(&st, &l, TierId::PMEM).unwrap();
        let mut model = HashMap::new();
        for (n, op) in ops.into_iter().enumerate() {
            match op {
                MapOp::Put(k) => {
                    let v = &values[n % values.len()];
                    let old = m.put(&st, &k, v).unwrap();
                    prop_assert_eq!(old, model.insert(k, v.root));
                }
                MapOp::Get(k) => {
                    let got = m.get(&st, &k).unwrap().map(|o| o.root);
                    prop_assert_eq!(got, model.get(&k).copied());
                }
                MapOp::Delete(k) => {
                    prop_assert_eq!(m.delete(&st, &k).unwrap(), model.remove(&k).is_some());
                }
            }
            prop_assert_eq!(m.len(), model.len() as u64);
        }
        let mut all = m.entries(&st).unwrap();
        all.sort();
        let mut want: Vec<_> = model.into_iter().collect();
        want.sort();
        prop_assert_eq!(all, want);
    }
}

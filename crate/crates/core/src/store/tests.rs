use std::collections::HashMap;

use proptest::prelude::*;
use tempfile::TempDir;

use super::*;
use crate::schema::{compute_layout, parse_schema};
use crate::tiers::Backing;

const PERSON: &str = "object person {
    age: i32 @pmem
    image: bytes @pmem @disk
    place: string @pmem
    name: string @pmem
}";

fn store(dir: &TempDir, pmem: u64) -> Store {
    Store::open(&[
        TierConfig::volatile("dram", 1 << 20),
        TierConfig::new("pmem", pmem, Backing::MappedFile(dir.path().join("pmem.arena"))),
        TierConfig::new("disk", 1 << 24, Backing::Directory(dir.path().join("disk"))),
    ])
    .unwrap()
}

fn layout(text: &str) -> Arc<LayoutPlan> {
    let s = parse_schema(text).unwrap();
    Arc::new(compute_layout(&s, &s.preferred_assignment()).unwrap())
}

#[test]
fn create_person() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 20);
    let l = layout(PERSON);
    let a = st.create_object(&l).unwrap();
    let b = st.create_object(&l).unwrap();
    assert_eq!(a.root.tier(), TierId::PMEM);
    assert_eq!(st.usage(TierId::PMEM).unwrap().used, 56);
    assert!(b.root.offset() >= a.root.offset() + 28);
    assert_eq!(st.get_field(&a, "image").unwrap(), None);
    assert_eq!(st.get_field(&a, "age").unwrap(), Some(Value::I32(0)));
}

#[test]
fn generated_accessor_usage() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 20);
    let p = st.create_object(&layout(PERSON)).unwrap();
    st.set_field(&p, "age", 10).unwrap();
    st.set_field(&p, "image", vec![7u8; 1000]).unwrap();
    st.set_field(&p, "place", "USA").unwrap();
    st.set_field(&p, "name", "BOB").unwrap();
    assert_eq!(st.get_field(&p, "age").unwrap(), Some(Value::I32(10)));
    assert_eq!(st.get_field(&p, "name").unwrap(), Some(Value::Str("BOB".into())));
    assert_eq!(st.get_field(&p, "place").unwrap(), Some(Value::Str("USA".into())));
    assert_eq!(st.get_field(&p, "image").unwrap(), Some(Value::Bytes(vec![7; 1000])));
    assert_eq!(st.payload_tier(&p, "image").unwrap(), Some(TierId::PMEM));
}

#[test]
fn field_errors() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 20);
    let p = st.create_object(&layout(PERSON)).unwrap();
    assert!(matches!(st.set_field(&p, "age", "ten"), Err(StoreError::KindMismatch { .. })));
    assert!(matches!(st.set_field(&p, "name", 3i32), Err(StoreError::KindMismatch { .. })));
    assert!(matches!(st.get_field(&p, "height"), Err(StoreError::UnknownField { .. })));
    assert!(matches!(st.demote_field(&p, "age", TierId::DISK), Err(StoreError::InlineField(_))));
    assert!(matches!(st.demote_field(&p, "image", TierId::DRAM), Err(StoreError::TierNotTagged { .. })));
}

#[test]
fn overwrite_reclaims_old_payload() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 20);
    let p = st.create_object(&layout(PERSON)).unwrap();
    st.set_field(&p, "name", "first").unwrap();
    let used = st.usage(TierId::PMEM).unwrap().used;
    st.set_field(&p, "name", "again").unwrap();
    assert_eq!(st.usage(TierId::PMEM).unwrap().used, used);
    assert_eq!(st.get_field(&p, "name").unwrap().unwrap().as_str(), Some("again"));
}

#[test]
fn place_field_follows_tags() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 28 + 100);
    let p = st.create_object(&layout(PERSON)).unwrap();
    assert_eq!(st.place_field(&p, "image", 50).unwrap(), TierId::PMEM);
    assert_eq!(st.place_field(&p, "image", 500).unwrap(), TierId::DISK);
    assert!(matches!(st.place_field(&p, "name", 500), Err(StoreError::AllTiersFull { .. })));

    st.set_field(&p, "image", vec![1u8; 500]).unwrap();
    assert_eq!(st.payload_tier(&p, "image").unwrap(), Some(TierId::DISK));
}

#[test]
fn demote_and_promote() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 20);
    let p = st.create_object(&layout(PERSON)).unwrap();
    let image: Vec<u8> = (0..4000u32).map(|i| i as u8).collect();
    st.set_field(&p, "image", image.clone()).unwrap();
    let pmem_used = st.usage(TierId::PMEM).unwrap().used;

    st.demote_field(&p, "image", TierId::DISK).unwrap();
    assert_eq!(st.payload_tier(&p, "image").unwrap(), Some(TierId::DISK));
    assert_eq!(st.get_field(&p, "image").unwrap(), Some(Value::Bytes(image.clone())));
    assert_eq!(st.usage(TierId::PMEM).unwrap().used, pmem_used - 4008);

    st.promote_field(&p, "image", TierId::PMEM).unwrap();
    assert_eq!(st.payload_tier(&p, "image").unwrap(), Some(TierId::PMEM));
    assert_eq!(st.get_field(&p, "image").unwrap(), Some(Value::Bytes(image)));
    assert_eq!(st.usage(TierId::DISK).unwrap().used, 0);
}

const CONTENDED: &str = "object o {
    spare: bytes @pmem @disk
    must: bytes @pmem
}";

#[test]
fn eviction_makes_room_for_single_tag_field() {
    let dir = TempDir::new().unwrap();
    // record (16 bytes) + one 1 KiB buffer fills pmem exactly
    let st = store(&dir, 16 + 1032);
    let l = layout(CONTENDED);
    let o = st.create_object(&l).unwrap();
    st.set_field(&o, "spare", vec![3u8; 1024]).unwrap();
    assert_eq!(st.usage(TierId::PMEM).unwrap().free(), 0);
    assert_eq!(st.payload_tier(&o, "spare").unwrap(), Some(TierId::PMEM));

    st.set_field(&o, "must", vec![4u8; 1024]).unwrap();
    let log = st.demotion_log();
    assert_eq!(log.len(), 1);
    assert_eq!((log[0].from, log[0].to, log[0].field.as_str()), (TierId::PMEM, TierId::DISK, "spare"));
    assert_eq!(st.payload_tier(&o, "spare").unwrap(), Some(TierId::DISK));
    assert_eq!(st.payload_tier(&o, "must").unwrap(), Some(TierId::PMEM));
    assert_eq!(st.get_field(&o, "spare").unwrap(), Some(Value::Bytes(vec![3; 1024])));
}

#[test]
fn eviction_edge_cases() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 16 + 100);
    assert_eq!(st.evict_for(TierId::PMEM, 50).unwrap(), vec![]);
    let o = st.create_object(&layout(CONTENDED)).unwrap();
    st.set_field(&o, "must", vec![0u8; 92]).unwrap();
    let err = st.evict_for(TierId::PMEM, 10).unwrap_err();
    assert!(matches!(err, StoreError::InsufficientSpace { reclaimable: 0, .. }), "{err}");
    let err = st.set_field(&o, "must", vec![0u8; 93]).unwrap_err();
    assert!(err.is_capacity());
    assert!(st.demotion_log().is_empty());
}

#[test]
fn eviction_picks_oldest_first() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 3 * 16 + 3 * 108);
    let l = layout(CONTENDED);
    let objs: Vec<_> = (0..3).map(|_| st.create_object(&l).unwrap()).collect();
    for o in &objs {
        st.set_field(o, "spare", vec![1u8; 100]).unwrap();
    }
    st.set_field(&objs[2], "must", vec![2u8; 150]).unwrap();
    let moved: Vec<_> = st.demotion_log().iter().map(|d| d.object).collect();
    assert_eq!(moved, vec![objs[0].root, objs[1].root]);
}

#[test]
fn create_object_when_full() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 40);
    let l = layout(PERSON);
    st.create_object(&l).unwrap();
    assert!(st.create_object(&l).unwrap_err().is_capacity());
}

#[test]
fn selective_access_accounting() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 20);
    let p = st.create_object(&layout(PERSON)).unwrap();
    st.set_field(&p, "age", 40).unwrap();
    st.set_field(&p, "image", vec![0u8; 10_000]).unwrap();
    st.set_field(&p, "place", "Lisbon").unwrap();
    let before = st.metrics().bytes_materialized;
    st.get_field(&p, "age").unwrap();
    st.get_field(&p, "place").unwrap();
    assert_eq!(st.metrics().bytes_materialized - before, 4 + 6);
    let before = st.metrics().bytes_materialized;
    let vals = st.get_fields(&p, &[0, 2, 3]).unwrap();
    assert_eq!(vals, vec![Some(Value::I32(40)), Some(Value::Str("Lisbon".into())), None]);
    assert_eq!(st.metrics().bytes_materialized - before, 4 + 6);
}

#[test]
fn reopen_recovers_fields() {
    let dir = TempDir::new().unwrap();
    let l = layout("object p { id: i64 @pmem  blob: bytes @disk  tag: string @pmem }");
    let root;
    {
        let st = store(&dir, 1 << 20);
        let o = st.create_object(&l).unwrap();
        st.set_field(&o, "id", 77i64).unwrap();
        st.set_field(&o, "blob", vec![9u8; 333]).unwrap();
        st.set_field(&o, "tag", "kept").unwrap();
        st.set_root(TierId::PMEM, o.root).unwrap();
        st.sync().unwrap();
        root = o.root;
    }
    let st = store(&dir, 1 << 20);
    assert_eq!(st.root(TierId::PMEM).unwrap(), root);
    let o = st.open_object(root, &l);
    assert_eq!(st.get_field(&o, "id").unwrap(), Some(Value::I64(77)));
    assert_eq!(st.get_field(&o, "blob").unwrap(), Some(Value::Bytes(vec![9; 333])));
    assert_eq!(st.get_field(&o, "tag").unwrap(), Some(Value::Str("kept".into())));
}

#[test]
fn metrics_csv() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 20);
    let csv = st.metrics().to_csv();
    assert!(csv.starts_with("counter,value\nbytes_materialized,0\nserde_events,0\n"));
    assert!(csv.contains("disk.serde_events,0\n"));
}

#[test]
fn concurrent_readers_of_distinct_objects() {
    let dir = TempDir::new().unwrap();
    let st = store(&dir, 1 << 22);
    let l = layout(PERSON);
    let objs: Vec<_> = (0..64)
        .map(|i| {
            let o = st.create_object(&l).unwrap();
            st.set_field(&o, "age", i).unwrap();
            st.set_field(&o, "name", format!("n{i}")).unwrap();
            o
        })
        .collect();
    std::thread::scope(|s| {
        for chunk in objs.chunks(16) {
            let st = &st;
            s.spawn(move || {
                for o in chunk {
                    let age = st.get_field(o, "age").unwrap().unwrap().as_i64().unwrap();
                    let name = st.get_field(o, "name").unwrap().unwrap();
                    assert_eq!(name.as_str().unwrap(), format!("n{age}"));
                }
            });
        }
    });
}

#[derive(Debug, Clone)]
enum Op {
    Set(usize, Value),
    Get(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        any::<i32>().prop_map(|v| Op::Set(0, Value::I32(v))),
        proptest::collection::vec(any::<u8>(), 0..600).prop_map(|v| Op::Set(1, Value::Bytes(v))),
        "[a-z]{0,20}".prop_map(|s| Op::Set(2, Value::Str(s))),
        "[a-z]{0,20}".prop_map(|s| Op::Set(3, Value::Str(s))),
        (0usize..4).prop_map(Op::Get),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn read_your_writes(ops in proptest::collection::vec(op(), 1..60)) {
        let dir = TempDir::new().unwrap();
        let st = store(&dir, 4096);
        let p = st.create_object(&layout(PERSON)).unwrap();
        let mut model: HashMap<usize, Value> = HashMap::from([(0, Value::I32(0))]);
        for op in ops {
            match op {
                Op::Set(i, v) => {
                    st.set_field_at(&p, i, v.clone()).unwrap();
                    model.insert(i, v);
                }
                Op::Get(i) => {
                    prop_assert_eq!(st.get_field_at(&p, i).unwrap(), model.get(&i).cloned());
                }
            }
            // payloads stay within their tags
            if let Some(t) = st.payload_tier(&p, "image").unwrap() {
                prop_assert!(t == TierId::PMEM || t == TierId::DISK);
            }
            for f in ["place", "name"] {
                if let Some(t) = st.payload_tier(&p, f).unwrap() {
                    prop_assert_eq!(t, TierId::PMEM);
                }
            }
            let u = st.usage(TierId::PMEM).unwrap();
            prop_assert!(u.used <= u.capacity);
        }
    }
}

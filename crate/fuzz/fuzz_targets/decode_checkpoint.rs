#![no_main]

use libfuzzer_sys::fuzz_target;
use slrnet::checkpoint;
use slrnet::nn::ParamStore;

fuzz_target!(|data: &[u8]| {
    if let Ok(entries) = checkpoint::decode(data) {
        let mut store = ParamStore::new();
        for (name, t) in entries {
            store.add(name, t);
        }
        let bytes = checkpoint::encode(&store);
        assert_eq!(
            checkpoint::decode(&bytes).expect("re-encoded checkpoint decodes").len(),
            store.len()
        );
    }
});

//! One consensus round by hand: three bookkeepers propose, the consortium
//! votes, the leader seals a block group, and a replica validates it.

use std::sync::Arc;

use min_core::apov::{Apov, Chain, ConsensusConfig, Transaction, VotePolicy};

fn main() {
    let apov = Apov::new(ConsensusConfig::standard(4, 100), 7).expect("valid config");
    let mut chain = Chain::new(&apov, true);
    let prev = chain.tip_digest();
    let leader = 0;
    let consortium = [1, 2, 3];

    let mut blocks: Vec<_> = consortium
        .iter()
        .map(|&b| {
            let txs = (0..100).map(|i| Transaction::nominal(b as u64 * 1000 + i, 40)).collect();
            Arc::new(apov.make_block(b, txs, prev, 1).unwrap())
        })
        .collect();
    // Bookkeeper 3 tampers with its block after building it.
    let mut bad = (*blocks[2]).clone();
    bad.merkle_root.0[0] ^= 0xff;
    blocks[2] = Arc::new(bad);

    let votes = consortium
        .iter()
        .map(|&v| apov.cast_validation_votes(v, &blocks, &prev, VotePolicy::Honest))
        .collect();
    let group = apov
        .tally_and_seal(leader, &consortium, votes, &blocks, 1, prev, 42)
        .expect("all votes present");
    println!(
        "height {} body {} blocks, {} txs, next leader {}",
        group.header.height,
        group.body.len(),
        group.committed_txs(),
        group.header.next_leader
    );

    let report = apov.validate_block_group(&group, &prev);
    println!("replica validation ok: {}", report.is_ok());
    chain.append(&apov, Arc::new(group)).unwrap();
    println!("chain height {} tip {}", chain.height(), chain.tip_digest().to_hex());
}

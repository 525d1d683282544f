//! Registers identifiers in a three-level domain tree and resolves them from
//! other domains, including through the JSON request interface.

use min_core::names::{ForwardingInfo, Identifier};
use min_core::registry::{RegisterRequest, Registry, RegistryConfig};

fn main() {
    let mut reg = Registry::three_level(2, RegistryConfig::default()).unwrap();
    let cn = reg.domain_id(&"/top/d0".parse().unwrap()).unwrap();
    let leaf = reg.domain_id(&"/top/d1/d1".parse().unwrap()).unwrap();

    let rec = reg
        .register(
            cn,
            RegisterRequest {
                identifier: "content:/top/d0/video/v1".parse().unwrap(),
                owner: "id:alice".parse().unwrap(),
                forwarding: ForwardingInfo::face(7),
            },
        )
        .unwrap();
    println!("committed in {} at height {}", rec.domain, rec.height);

    let id: Identifier = "content:/top/d0/video/v1".parse().unwrap();
    let r = reg.resolve(leaf, &id);
    let hops: Vec<String> = r.hops.iter().map(|h| h.to_string()).collect();
    println!("from /top/d1/d1: {:?} via {}", r.outcome, hops.join(" -> "));
    println!("again (cached): {:?}", reg.resolve(leaf, &id).outcome);
    println!("unknown: {:?}", reg.resolve(leaf, &"content:/nowhere".parse().unwrap()).outcome);
    println!("ip: {:?}", reg.resolve(leaf, &"ip:192.0.2.1".parse().unwrap()).outcome);

    let reply = reg.handle_json(
        r#"{"op":"register","domain":"/top/d1","identifier":"id:bob","owner":"id:bob","forwarding":{"face_id":3,"metric":null}}"#,
    );
    println!("{reply}");
    println!("{}", reg.handle_json(r#"{"op":"resolve","origin":"/top/d0/d0","identifier":"id:bob"}"#));
    println!("audit issues: {}", reg.audit().len());
}

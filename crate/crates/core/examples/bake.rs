fn main() {
    let (chain, home) = cbf_core::scenario::chain_preset("franka7").unwrap();
    let ee = chain.forward_kinematics(&home).unwrap()[chain.end_effector_index()];
    println!("{:?} {:?} {:?}", ee.x, ee.y, ee.z);
}

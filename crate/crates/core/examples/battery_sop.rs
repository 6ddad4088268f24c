//! Three-minute state of power and capacity fade of the default pack across
//! SOC and SOH.
//!
//! cargo run --example battery_sop

use v2g_sim::battery::{peak_power, soh_capacity_fade, BatteryPackState, CellSpec, PackTopology};

fn main() -> v2g_sim::Result<()> {
    let cell = CellSpec::default();
    let topo = PackTopology::default();
    println!("{:>5} {:>6} {:>10} {:>10} {:>9} {:>9}", "soc", "soh", "p_ch_kw", "p_dis_kw", "ch_lim", "dis_lim");
    for soh in [100.0, 90.0, 80.0] {
        for soc in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let state = BatteryPackState::new(soc, soh, 0.0);
            let pp = peak_power(&cell, &topo, &state, (0.1, 0.9), 0.05)?;
            println!(
                "{soc:>5.2} {soh:>6.1} {:>10.2} {:>10.2} {:>9} {:>9}",
                pp.p_ch_kw,
                pp.p_dis_kw,
                format!("{:?}", pp.ch_limit),
                format!("{:?}", pp.dis_limit)
            );
        }
    }

    println!("\ncapacity after i cycles at mixed stress (a = d = 0.5)");
    for i in [0.0, 250.0, 500.0, 1000.0, 2000.0] {
        println!("{i:>6} cycles: SOH {:.3} %", soh_capacity_fade(0.5, 0.5, i)?);
    }
    Ok(())
}

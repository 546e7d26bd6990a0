//! Prints every path's length and the conflict table for the eight vehicle
//! types used in training.
//!
//!     cargo run --example intersection_geometry

use mappo::geometry::{classify_conflict, ConflictKind, Intersection, IntersectionLayout, VehicleType};

fn main() -> mappo::Result<()> {
    let isect = Intersection::new(IntersectionLayout::default())?;
    let types = VehicleType::EXPERIMENT_MODES;

    println!("type  length   center   entry (x, y)        exit (x, y)");
    for t in types {
        let p = isect.path(t);
        let (a, b) = (p.pose_at_progress(0.0), p.pose_at_progress(p.total_length));
        println!(
            "{:4}  {:6.2}  {:6.2}   ({:7.2}, {:7.2})   ({:7.2}, {:7.2})",
            format!("{t:?}"),
            p.total_length,
            p.center_offset,
            a.x,
            a.y,
            b.x,
            b.y
        );
    }

    println!("\nconflicts (x = crossing, > = converging, < = diverging, . = none)");
    print!("    ");
    for t in types {
        print!("{:>4}", format!("{t:?}"));
    }
    println!();
    for a in types {
        print!("{:>4}", format!("{a:?}"));
        for b in types {
            let mark = if a == b {
                "-"
            } else {
                match classify_conflict(a, b, isect.paths()).kind {
                    ConflictKind::Crossing => "x",
                    ConflictKind::Converging => ">",
                    ConflictKind::Diverging => "<",
                    ConflictKind::None => ".",
                }
            };
            print!("{mark:>4}");
        }
        println!();
    }
    Ok(())
}

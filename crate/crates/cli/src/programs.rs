//! Built-in demo kernels for `pgas run`. Each is an SPMD entry procedure:
//! every unit executes the whole function against its own context.

use pgas_core::{GlobalPtr, Result, TeamId, UnitContext, UnitId};

pub fn hello(ctx: &mut UnitContext) -> Result<i32> {
    ctx.init()?;
    println!("unit {} of {} reporting", ctx.my_id(), ctx.num_units());
    ctx.barrier(TeamId::ALL)?;
    ctx.finalize()?;
    Ok(ctx.my_id().0 as i32)
}

/// Unit 0 injects a token; each unit adds one and forwards it around the
/// ring through the neighbour's slot of a collective allocation.
pub fn ring(ctx: &mut UnitContext) -> Result<i32> {
    ctx.init()?;
    let n = ctx.num_units();
    let me = ctx.my_id().0;
    let slot = ctx.team_memalloc_aligned(TeamId::ALL, 8)?;

    let mut token = ctx.seed();
    for hop in 0..n {
        // Unit `hop` writes token+1 into the next unit's slot.
        if me == hop {
            if hop > 0 {
                let mut buf = [0u8; 8];
                ctx.get_blocking(&mut buf, slot.with_unit(ctx.my_id()))?;
                token = u64::from_le_bytes(buf);
            }
            let next = (me + 1) % n;
            ctx.put_blocking(slot.with_unit(UnitId(next)), &(token + 1).to_le_bytes())?;
        }
        ctx.barrier(TeamId::ALL)?;
    }
    if me == 0 {
        let mut buf = [0u8; 8];
        ctx.get_blocking(&mut buf, slot.with_unit(ctx.my_id()))?;
        let went_round = u64::from_le_bytes(buf);
        println!("token made the round: {} -> {}", ctx.seed(), went_round);
        assert_eq!(went_round, ctx.seed() + n as u64);
    }
    ctx.team_memfree(TeamId::ALL, slot)?;
    ctx.finalize()?;
    Ok(0)
}

/// Classic exclusion demo: N units x 100 rounds of a non-atomic
/// read-modify-write under the team lock must count to exactly N*100.
pub fn lock_demo(ctx: &mut UnitContext) -> Result<i32> {
    const ROUNDS: u64 = 100;
    ctx.init()?;
    let mut enc = [0u8; 16];
    if ctx.team_my_id(TeamId::ALL)? == 0 {
        let counter = ctx.memalloc(8)?;
        ctx.put_blocking(counter, &0u64.to_le_bytes())?;
        enc = counter.to_le_bytes();
    }
    ctx.bcast(TeamId::ALL, 0, &mut enc)?;
    let counter = GlobalPtr::from_le_bytes(enc);

    let mut lock = ctx.team_lock_init(TeamId::ALL)?;
    for _ in 0..ROUNDS {
        lock.acquire(ctx)?;
        let mut buf = [0u8; 8];
        ctx.get_blocking(&mut buf, counter)?;
        let v = u64::from_le_bytes(buf) + 1;
        ctx.put_blocking(counter, &v.to_le_bytes())?;
        lock.release(ctx)?;
    }
    ctx.barrier(TeamId::ALL)?;
    if ctx.team_my_id(TeamId::ALL)? == 0 {
        let mut buf = [0u8; 8];
        ctx.get_blocking(&mut buf, counter)?;
        let total = u64::from_le_bytes(buf);
        println!(
            "counter: {} (expected {})",
            total,
            ctx.num_units() as u64 * ROUNDS
        );
        assert_eq!(total, ctx.num_units() as u64 * ROUNDS);
        ctx.memfree(counter)?;
    }
    lock.free(ctx)?;
    ctx.finalize()?;
    Ok(0)
}

/// Broadcast a seed, scatter per-unit payloads, gather them back.
pub fn collectives_demo(ctx: &mut UnitContext) -> Result<i32> {
    ctx.init()?;
    let n = ctx.num_units() as usize;
    let me = ctx.team_my_id(TeamId::ALL)?;

    let mut seed = if me == 0 {
        ctx.seed().to_le_bytes().to_vec()
    } else {
        vec![0u8; 8]
    };
    ctx.bcast(TeamId::ALL, 0, &mut seed)?;

    let chunk = 32usize;
    let send: Vec<u8> = (0..n * chunk).map(|i| (i % 251) as u8).collect();
    let mut piece = vec![0u8; chunk];
    ctx.scatter(TeamId::ALL, 0, (me == 0).then_some(&send[..]), &mut piece)?;

    let mut back = vec![0u8; n * chunk];
    let recv = (me == 0).then_some(&mut back[..]);
    ctx.gather(TeamId::ALL, 0, &piece, recv)?;
    if me == 0 {
        assert_eq!(back, send, "scatter then gather reconstructs the data");
        println!("collectives round-trip ok over {n} units");
    }
    ctx.finalize()?;
    Ok(0)
}

//! Value-file GC: read the input's index, look each key up in the index
//! tree, then read and rewrite only the records still referenced.

use std::sync::Arc;
use std::time::Instant;

use kvsep_core::format::rtable::decode_record;
use kvsep_core::format::{BlockKind, LookupMode, RTableIndexEntry};
use kvsep_core::gc::{successor_temperature, GcJobStats};
use kvsep_core::manifest::{EditItem, VersionEdit};
use kvsep_core::vstore::Temperature;
use kvsep_core::EntryValue;

use super::{bump, slot, FailPoint, Inner, Maint, TEMPERATURES};
use crate::error::{Error, Result};
use crate::file::TableFile;
use crate::iostat::{Activity, IoScope};
use crate::memtable::Memtable;
use crate::version::{VTable, Version};

struct Survivor {
    key: Vec<u8>,
    seq: u64,
    value: Vec<u8>,
    hot: bool,
}

fn elapsed_ns(t: Instant) -> u64 {
    t.elapsed().as_nanos() as u64
}

impl Inner {
    /// Collects `inputs` into at most one output per temperature. Every
    /// input is retired with a single successor, or none if nothing in it
    /// survived.
    pub(super) fn run_gc(&self, m: &mut Maint, v: &Version, inputs: Vec<u64>) -> Result<GcJobStats> {
        let mut stats = GcJobStats {
            job_id: m.next_job,
            inputs: inputs.clone(),
            ..Default::default()
        };
        let (active, imms) = {
            let mem = self.mem.read().unwrap();
            (mem.active.clone(), mem.imm.clone())
        };
        let mut buckets: [Vec<Survivor>; 2] = [Vec::new(), Vec::new()];
        let mut successor_of = Vec::with_capacity(inputs.len());

        for &f in &inputs {
            let meta = v.state.registry.get(f).ok_or(Error::MissingFile(f))?;
            if !meta.is_live() {
                return Err(Error::InvalidArgument("gc input is not a live value file"));
            }
            let vt = v.vtable(f)?.clone();

            let t = Instant::now();
            let (index, whole) = {
                let _s = IoScope::enter(Activity::Gc);
                let index = vt.read_index().map_err(Error::in_file(f))?;
                stats.index_bytes_read += vt.partitions_size();
                let whole = if self.cfg.lazy_read {
                    None
                } else {
                    let n = vt.records_size();
                    let buf = self.gc_read(vt.source(), 0, n, &mut stats)?;
                    stats.value_bytes_read += n;
                    Some(buf)
                };
                (index, whole)
            };
            stats.read_ns += elapsed_ns(t);

            let t = Instant::now();
            let kv_before = self.env.stats.snapshot().accesses(Activity::GcLookup, BlockKind::KvBlock);
            let live: Vec<bool> = {
                let _s = IoScope::enter(Activity::GcLookup);
                index
                    .iter()
                    .map(|e| self.gc_is_live(v, &active, &imms, e, f))
                    .collect::<Result<_>>()?
            };
            stats.kv_block_reads_in_lookup +=
                self.env.stats.snapshot().accesses(Activity::GcLookup, BlockKind::KvBlock) - kv_before;
            stats.lookup_ns += elapsed_ns(t);

            let t = Instant::now();
            let keep: Vec<&RTableIndexEntry> = index
                .iter()
                .zip(&live)
                .filter(|(_, l)| **l)
                .map(|(e, _)| e)
                .collect();
            let survivors = {
                let _s = IoScope::enter(Activity::Gc);
                match &whole {
                    Some(buf) => keep
                        .iter()
                        .map(|e| {
                            let raw = &buf[e.offset as usize..(e.offset + e.size) as usize];
                            let value = decode_record(raw, &e.key).map_err(Error::in_file(f))?;
                            Ok(Survivor {
                                key: e.key.clone(),
                                seq: e.seq,
                                value: value.to_vec(),
                                hot: false,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?,
                    None if self.cfg.gc_readahead => self.read_windowed(&vt, &keep, &mut stats)?,
                    None => {
                        let mut out = Vec::with_capacity(keep.len());
                        for e in &keep {
                            let raw = self.gc_read(vt.source(), e.offset, e.size, &mut stats)?;
                            let value = decode_record(&raw, &e.key).map_err(Error::in_file(f))?;
                            stats.value_bytes_read += e.size;
                            out.push(Survivor {
                                key: e.key.clone(),
                                seq: e.seq,
                                value: value.to_vec(),
                                hot: false,
                            });
                        }
                        out
                    }
                }
            };
            stats.read_ns += elapsed_ns(t);

            stats.input_entries += index.len() as u64;
            stats.input_value_bytes += vt.records_size();
            stats.survivor_entries += keep.len() as u64;
            stats.survivor_bytes += keep.iter().map(|e| e.size).sum::<u64>();
            stats.garbage_entries += (index.len() - keep.len()) as u64;

            let (mut hot, mut cold) = (0u64, 0u64);
            let mut survivors = survivors;
            for (s, e) in survivors.iter_mut().zip(&keep) {
                s.hot = m.dropcache.is_hot(&s.key);
                if s.hot {
                    hot += e.size;
                } else {
                    cold += e.size;
                }
            }
            // without routing everything shares one output
            let temp = if self.cfg.dropcache {
                successor_temperature(hot, cold)
            } else {
                Temperature::Cold
            };
            if self.cfg.dropcache && hot > 0 && cold > 0 {
                stats.temperature_overrides += 1;
            }
            if survivors.is_empty() {
                successor_of.push((f, None));
            } else {
                successor_of.push((f, Some(temp)));
                buckets[slot(temp)].extend(survivors);
            }
        }

        let t = Instant::now();
        let mut edit = VersionEdit::new();
        let mut new_v = Vec::new();
        let mut output_of = [None, None];
        {
            let _s = IoScope::enter(Activity::Gc);
            for temp in TEMPERATURES {
                let bucket = &mut buckets[slot(temp)];
                if bucket.is_empty() {
                    continue;
                }
                bucket.sort_by(|a, b| a.key.cmp(&b.key));
                let mut out = self.new_vsst()?;
                for s in bucket.iter() {
                    out.builder.add(&s.key, s.seq, &s.value)?;
                    *(if s.hot { &mut out.hot_bytes } else { &mut out.cold_bytes }) += s.value.len() as u64;
                }
                let (meta, t) = self.finish_vsst(out, temp)?;
                stats.bytes_written += meta.file_size;
                stats.outputs.push(meta.file_number);
                output_of[slot(temp)] = Some(meta.file_number);
                edit.push(EditItem::AddVsst(meta));
                new_v.push(t);
            }
        }
        for (f, temp) in successor_of {
            edit.push(EditItem::Retire {
                file: f,
                successor: temp.and_then(|t| output_of[slot(t)]),
            });
        }
        self.fail(FailPoint::GcBeforeInstall)?;
        self.install(m, edit, Vec::new(), new_v)?;
        self.fail(FailPoint::GcAfterInstall)?;
        stats.write_ns += elapsed_ns(t);

        m.next_job += 1;
        bump(&self.counters.gc_jobs, 1);
        self.gc_jobs.lock().unwrap().push(stats.clone());
        Ok(stats)
    }

    /// A record is live when no memtable holds its key and the newest
    /// index-side entry for the key points (through inheritance) at this
    /// file with the same sequence number.
    fn gc_is_live(
        &self,
        v: &Version,
        active: &Memtable,
        imms: &[Arc<Memtable>],
        e: &RTableIndexEntry,
        file: u64,
    ) -> Result<bool> {
        if active.contains(&e.key) || imms.iter().any(|t| t.contains(&e.key)) {
            return Ok(false);
        }
        match v.lookup(&e.key, LookupMode::KfOnly)? {
            Some(ie) => match ie.value {
                EntryValue::Reference(g) => {
                    Ok(ie.seq == e.seq && v.state.registry.resolve(g)? == Some(file))
                }
                _ => Ok(false),
            },
            None => Ok(false),
        }
    }

    /// Reads survivors through a sliding window of `gc_readahead_size`
    /// bytes, so neighbouring records share one read.
    fn gc_read(&self, file: &TableFile, offset: u64, len: u64, stats: &mut GcJobStats) -> Result<Vec<u8>> {
        if self.cfg.gc_direct_io {
            let (buf, fetched) = file.read_direct(offset, len, BlockKind::Record)?;
            stats.value_bytes_fetched += fetched;
            Ok(buf)
        } else {
            stats.value_bytes_fetched += len;
            Ok(file.read_raw(offset, len, BlockKind::Record)?)
        }
    }

    fn read_windowed(
        &self,
        vt: &VTable,
        keep: &[&RTableIndexEntry],
        stats: &mut GcJobStats,
    ) -> Result<Vec<Survivor>> {
        let f = vt.source().number();
        let end = vt.records_size();
        let mut window: Option<(u64, Vec<u8>)> = None;
        let mut out = Vec::with_capacity(keep.len());
        for e in keep {
            let covered = window
                .as_ref()
                .is_some_and(|(start, buf)| e.offset >= *start && e.offset + e.size <= start + buf.len() as u64);
            if !covered {
                let len = self.cfg.gc_readahead_size.max(e.size).min(end - e.offset);
                let buf = self.gc_read(vt.source(), e.offset, len, stats)?;
                window = Some((e.offset, buf));
            }
            let (start, buf) = window.as_ref().expect("window filled");
            let lo = (e.offset - start) as usize;
            let raw = &buf[lo..lo + e.size as usize];
            let value = decode_record(raw, &e.key).map_err(Error::in_file(f))?;
            stats.value_bytes_read += e.size;
            out.push(Survivor {
                key: e.key.clone(),
                seq: e.seq,
                value: value.to_vec(),
                hot: false,
            });
        }
        Ok(out)
    }
}

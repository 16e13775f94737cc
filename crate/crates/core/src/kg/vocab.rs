use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{EntityId, KgError, RelationId, Timestamp};

/// Name tables for entities, relations and time labels. Position in each list
/// is the id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    entities: Vec<String>,
    relations: Vec<String>,
    times: Vec<String>,
    entity_ids: HashMap<String, u32>,
    relation_ids: HashMap<String, u32>,
    time_ids: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    entities: Vec<String>,
    relations: Vec<String>,
    times: Vec<String>,
}

fn index_names(kind: &'static str, names: &[String]) -> Result<HashMap<String, u32>, KgError> {
    let mut map = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.clone(), i as u32).is_some() {
            return Err(KgError::DuplicateName { kind, name: n.clone() });
        }
    }
    Ok(map)
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, u32>, name: &str) -> u32 {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = names.len() as u32;
    names.push(name.to_string());
    ids.insert(name.to_string(), id);
    id
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_lists(entities: Vec<String>, relations: Vec<String>, times: Vec<String>) -> Result<Self, KgError> {
        Ok(Vocab {
            entity_ids: index_names("entity", &entities)?,
            relation_ids: index_names("relation", &relations)?,
            time_ids: index_names("time", &times)?,
            entities,
            relations,
            times,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_times(&self) -> usize {
        self.times.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied().map(EntityId)
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied().map(RelationId)
    }

    pub fn time_id(&self, label: &str) -> Option<Timestamp> {
        self.time_ids.get(label).copied().map(Timestamp)
    }

    pub fn entity_name(&self, id: EntityId) -> Option<&str> {
        self.entities.get(id.index()).map(String::as_str)
    }

    pub fn relation_name(&self, id: RelationId) -> Option<&str> {
        self.relations.get(id.index()).map(String::as_str)
    }

    pub fn time_label(&self, t: Timestamp) -> Option<&str> {
        self.times.get(t.0 as usize).map(String::as_str)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        EntityId(intern(&mut self.entities, &mut self.entity_ids, name))
    }

    pub fn intern_relation(&mut self, name: &str) -> RelationId {
        RelationId(intern(&mut self.relations, &mut self.relation_ids, name))
    }

    pub fn intern_time(&mut self, label: &str) -> Timestamp {
        Timestamp(intern(&mut self.times, &mut self.time_ids, label))
    }

    /// Extends the time table with decimal labels so that tick `t` exists.
    pub(crate) fn ensure_integer_tick(&mut self, t: u32) {
        while self.times.len() <= t as usize {
            let label = self.times.len().to_string();
            intern(&mut self.times, &mut self.time_ids, &label);
        }
    }

    /// Reorders time labels by sorted label order and returns the old→new
    /// tick mapping.
    pub(crate) fn sort_times(&mut self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.times.len() as u32).collect();
        order.sort_by(|&a, &b| self.times[a as usize].cmp(&self.times[b as usize]));
        let mut remap = vec![0u32; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old as usize] = new as u32;
        }
        self.times = order.iter().map(|&o| self.times[o as usize].clone()).collect();
        self.time_ids = self
            .times
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        remap
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), KgError> {
        let file = VocabFile {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            times: self.times.clone(),
        };
        serde_json::to_writer_pretty(w, &file).map_err(|e| KgError::Io(e.to_string()))
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self, KgError> {
        let file: VocabFile = serde_json::from_reader(r).map_err(|e| KgError::BadVocab(e.to_string()))?;
        Vocab::from_lists(file.entities, file.relations, file.times)
    }
}

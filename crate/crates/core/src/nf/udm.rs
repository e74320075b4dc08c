//! Unified data management: an in-memory table store with per-service
//! tables of string tuples. The first schema column is the primary key.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{call, call_json, decode_body, is_valid_id, NfError, UDM};
use crate::bus::{Bus, Endpoint, Message, Method, Status};

pub type Row = Vec<String>;

/// Table of registered applications, written by the SRF.
pub const APP_REGISTRY: &str = "app_registry";
pub const APP_REGISTRY_SCHEMA: [&str; 4] = ["app_id", "image_location", "access_endpoint", "registered_at"];
/// Running application instances, consulted by the ASF.
pub const ACTIVE_APPS: &str = "active_apps";
pub const ACTIVE_APPS_SCHEMA: [&str; 4] = ["instance_id", "service_class", "service_name", "endpoint"];
pub const CHARGING: &str = "charging";
pub const CHARGING_SCHEMA: [&str; 4] = ["instance_id", "cpu_work", "mem_mb_time", "cost"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UdmError {
    #[error("table {0:?} not found")]
    TableNotFound(String),
    #[error("key {key:?} not found in {table:?}")]
    KeyNotFound { table: String, key: String },
    #[error("key {key:?} already present in {table:?}")]
    DuplicateKey { table: String, key: String },
    #[error("row has {got} columns, schema of {table:?} has {expected}")]
    ArityMismatch { table: String, expected: usize, got: usize },
    #[error("row key {row_key:?} does not match {key:?}")]
    KeyMismatch { key: String, row_key: String },
    #[error("table {0:?} already exists with a different schema")]
    SchemaConflict(String),
    #[error("invalid table definition: {0}")]
    InvalidTable(String),
}

impl UdmError {
    pub fn code(&self) -> &'static str {
        match self {
            UdmError::TableNotFound(_) => "TableNotFound",
            UdmError::KeyNotFound { .. } => "KeyNotFound",
            UdmError::DuplicateKey { .. } => "DuplicateKey",
            UdmError::ArityMismatch { .. } => "ArityMismatch",
            UdmError::KeyMismatch { .. } => "KeyMismatch",
            UdmError::SchemaConflict(_) => "SchemaConflict",
            UdmError::InvalidTable(_) => "InvalidTable",
        }
    }

    fn status(&self) -> Status {
        match self {
            UdmError::TableNotFound(_) | UdmError::KeyNotFound { .. } => Status::NOT_FOUND,
            UdmError::DuplicateKey { .. } | UdmError::SchemaConflict(_) => Status::CONFLICT,
            _ => Status::UNPROCESSABLE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataTable {
    pub service_name: String,
    pub schema: Vec<String>,
    pub rows: BTreeMap<String, Row>,
}

impl DataTable {
    fn check_arity(&self, row: &Row) -> Result<(), UdmError> {
        if row.len() != self.schema.len() {
            return Err(UdmError::ArityMismatch {
                table: self.service_name.clone(),
                expected: self.schema.len(),
                got: row.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Udm {
    tables: BTreeMap<String, DataTable>,
}

impl Udm {
    /// Store with the registry, active-app and charging tables created.
    pub fn new() -> Self {
        let mut udm = Udm::default();
        for (name, schema) in [
            (APP_REGISTRY, &APP_REGISTRY_SCHEMA),
            (ACTIVE_APPS, &ACTIVE_APPS_SCHEMA),
            (CHARGING, &CHARGING_SCHEMA),
        ] {
            let schema = schema.iter().map(|s| s.to_string()).collect();
            udm.create_table(name, schema).expect("built-in tables are valid");
        }
        udm
    }

    /// Creating an existing table with the same schema is a no-op.
    pub fn create_table(&mut self, name: &str, schema: Vec<String>) -> Result<(), UdmError> {
        if !is_valid_id(name) {
            return Err(UdmError::InvalidTable(format!("bad table name {name:?}")));
        }
        if schema.is_empty() {
            return Err(UdmError::InvalidTable("schema must have at least the key column".into()));
        }
        if let Some(existing) = self.tables.get(name) {
            return if existing.schema == schema { Ok(()) } else { Err(UdmError::SchemaConflict(name.to_string())) };
        }
        self.tables.insert(
            name.to_string(),
            DataTable { service_name: name.to_string(), schema, rows: BTreeMap::new() },
        );
        Ok(())
    }

    pub fn table(&self, name: &str) -> Result<&DataTable, UdmError> {
        self.tables.get(name).ok_or_else(|| UdmError::TableNotFound(name.to_string()))
    }

    fn table_mut(&mut self, name: &str) -> Result<&mut DataTable, UdmError> {
        self.tables.get_mut(name).ok_or_else(|| UdmError::TableNotFound(name.to_string()))
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.keys().map(String::as_str)
    }

    pub fn insert(&mut self, table: &str, row: Row) -> Result<(), UdmError> {
        let t = self.table_mut(table)?;
        t.check_arity(&row)?;
        let key = row[0].clone();
        if t.rows.contains_key(&key) {
            return Err(UdmError::DuplicateKey { table: table.to_string(), key });
        }
        t.rows.insert(key, row);
        Ok(())
    }

    pub fn query(&self, table: &str, key: &str) -> Result<Option<&Row>, UdmError> {
        Ok(self.table(table)?.rows.get(key))
    }

    pub fn update(&mut self, table: &str, key: &str, row: Row) -> Result<(), UdmError> {
        let t = self.table_mut(table)?;
        t.check_arity(&row)?;
        if row[0] != key {
            return Err(UdmError::KeyMismatch { key: key.to_string(), row_key: row[0].clone() });
        }
        match t.rows.get_mut(key) {
            Some(slot) => {
                *slot = row;
                Ok(())
            }
            None => Err(UdmError::KeyNotFound { table: table.to_string(), key: key.to_string() }),
        }
    }

    pub fn delete(&mut self, table: &str, key: &str) -> Result<(), UdmError> {
        let t = self.table_mut(table)?;
        t.rows
            .remove(key)
            .map(|_| ())
            .ok_or_else(|| UdmError::KeyNotFound { table: table.to_string(), key: key.to_string() })
    }

    pub fn snapshot_to(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        fs::write(path, json)
    }

    pub fn load_from(path: &Path) -> std::io::Result<Udm> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn reply(result: Result<Message, UdmError>) -> Message {
        result.unwrap_or_else(|e| Message::error(e.status(), e.code(), &e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TableDef {
    pub schema: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TableDump {
    pub schema: Vec<String>,
    pub rows: Vec<Row>,
}

impl Endpoint for Udm {
    fn handle(&mut self, req: &Message, _bus: &mut Bus) -> Message {
        let segs = req.segments();
        let method = req.method().expect("bus delivers requests");
        match (method, segs.as_slice()) {
            (Method::Get, [_, table]) => Udm::reply(self.table(table).map(|t| {
                let dump = TableDump { schema: t.schema.clone(), rows: t.rows.values().cloned().collect() };
                Message::json_response(Status::OK, &dump)
            })),
            (Method::Post, [_, table]) => match decode_body::<TableDef>(req) {
                Ok(def) => Udm::reply(self.create_table(table, def.schema).map(|_| Message::response(Status::CREATED))),
                Err(resp) => resp,
            },
            (Method::Get, [_, table, key]) => match self.query(table, key) {
                Ok(Some(row)) => Message::json_response(Status::OK, row),
                Ok(None) => Message::error(Status::NOT_FOUND, "Absent", format!("{key} not in {table}")),
                Err(e) => Udm::reply(Err(e)),
            },
            (Method::Post, [_, table, key]) => match decode_body::<Row>(req) {
                Ok(row) if row.first().map(String::as_str) != Some(*key) => Udm::reply(Err(UdmError::KeyMismatch {
                    key: key.to_string(),
                    row_key: row.first().cloned().unwrap_or_default(),
                })),
                Ok(row) => Udm::reply(self.insert(table, row).map(|_| Message::response(Status::CREATED))),
                Err(resp) => resp,
            },
            (Method::Put, [_, table, key]) => match decode_body::<Row>(req) {
                Ok(row) => Udm::reply(self.update(table, key, row).map(|_| Message::response(Status::OK))),
                Err(resp) => resp,
            },
            (Method::Delete, [_, table, key]) => {
                Udm::reply(self.delete(table, key).map(|_| Message::response(Status::OK)))
            }
            _ => Message::error(Status::NOT_FOUND, "NoRoute", format!("{method} {}", req.path().unwrap_or(""))),
        }
    }
}

fn row_path(table: &str, key: &str) -> String {
    format!("/sbi/udm/{table}/{key}")
}

/// Bus client for the UDM endpoint.
pub mod client {
    use super::*;

    pub fn create_table(bus: &mut Bus, table: &str, schema: &[String]) -> Result<(), NfError> {
        let m = Message::request(Method::Post, format!("/sbi/udm/{table}"))?.with_json(&TableDef { schema: schema.to_vec() });
        call(bus, UDM, m).map(|_| ())
    }

    pub fn insert(bus: &mut Bus, table: &str, row: &[String]) -> Result<(), NfError> {
        let key = row.first().map(String::as_str).unwrap_or("");
        let m = Message::request(Method::Post, row_path(table, key))?.with_json(&row);
        call(bus, UDM, m).map(|_| ())
    }

    pub fn query(bus: &mut Bus, table: &str, key: &str) -> Result<Option<Row>, NfError> {
        let m = Message::request(Method::Get, row_path(table, key))?;
        match call_json(bus, UDM, m) {
            Ok(row) => Ok(Some(row)),
            Err(e) if e.code() == Some("Absent") => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn update(bus: &mut Bus, table: &str, key: &str, row: &[String]) -> Result<(), NfError> {
        let m = Message::request(Method::Put, row_path(table, key))?.with_json(&row);
        call(bus, UDM, m).map(|_| ())
    }

    pub fn delete(bus: &mut Bus, table: &str, key: &str) -> Result<(), NfError> {
        let m = Message::request(Method::Delete, row_path(table, key))?;
        call(bus, UDM, m).map(|_| ())
    }

    pub fn scan(bus: &mut Bus, table: &str) -> Result<TableDump, NfError> {
        let m = Message::request(Method::Get, format!("/sbi/udm/{table}"))?;
        call_json(bus, UDM, m)
    }
}

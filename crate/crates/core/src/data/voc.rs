use std::fmt::Write as _;

use roxmltree::Document;

use crate::error::{Error, Result};
use crate::targets::GroundTruthBox;

fn xml_err(doc: Option<&Document>, node: Option<roxmltree::Node>, msg: impl Into<String>) -> Error {
    let pos = match (doc, node) {
        (Some(d), Some(n)) => {
            let p = d.text_pos_at(n.range().start);
            format!("{}:{}", p.row, p.col)
        }
        _ => "?".into(),
    };
    Error::Xml { pos, msg: msg.into() }
}

fn child<'a, 'i>(doc: &Document, parent: roxmltree::Node<'a, 'i>, tag: &str) -> Result<roxmltree::Node<'a, 'i>> {
    parent
        .children()
        .find(|n| n.has_tag_name(tag))
        .ok_or_else(|| xml_err(Some(doc), Some(parent), format!("missing <{tag}>")))
}

/// Parses VOC annotation XML, mapping names through `classes` and shifting
/// the 1-based pixel indices to 0-based.
pub fn parse_voc_xml(text: &str, classes: &[String]) -> Result<Vec<GroundTruthBox>> {
    let doc = Document::parse(text).map_err(|e| {
        let p = e.pos();
        Error::Xml {
            pos: format!("{}:{}", p.row, p.col),
            msg: e.to_string(),
        }
    })?;
    let mut out = Vec::new();
    for obj in doc.root_element().children().filter(|n| n.has_tag_name("object")) {
        let child = |parent, tag| child(&doc, parent, tag);
        let name_node = child(obj, "name")?;
        let name = name_node.text().unwrap_or("").trim();
        let class_id = classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownClass(name.to_string()))?;
        let bb = child(obj, "bndbox")?;
        let mut v = [0.0; 4];
        for (slot, tag) in v.iter_mut().zip(["xmin", "ymin", "xmax", "ymax"]) {
            let n = child(bb, tag)?;
            let t = n.text().unwrap_or("").trim();
            *slot = t
                .parse::<f64>()
                .map_err(|_| xml_err(Some(&doc), Some(n), format!("<{tag}> is not a number: {t:?}")))?
                - 1.0;
        }
        let b = GroundTruthBox::new(v[0], v[1], v[2], v[3], class_id);
        b.validate(classes.len(), None)
            .map_err(|e| xml_err(Some(&doc), Some(obj), e.to_string()))?;
        out.push(b);
    }
    Ok(out)
}

/// Writes boxes back as VOC XML (1-based indices).
pub fn write_voc_xml(filename: &str, size: (usize, usize), boxes: &[GroundTruthBox], classes: &[String]) -> String {
    let (h, w) = size;
    let mut s = String::new();
    let _ = writeln!(s, "<annotation>");
    let _ = writeln!(s, "  <filename>{filename}</filename>");
    let _ = writeln!(s, "  <size><width>{w}</width><height>{h}</height><depth>3</depth></size>");
    for b in boxes {
        let _ = writeln!(s, "  <object>");
        let _ = writeln!(s, "    <name>{}</name>", classes[b.class_id]);
        let _ = writeln!(
            s,
            "    <bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox>",
            b.tl_x + 1.0,
            b.tl_y + 1.0,
            b.br_x + 1.0,
            b.br_y + 1.0
        );
        let _ = writeln!(s, "  </object>");
    }
    let _ = writeln!(s, "</annotation>");
    s
}

use std::collections::HashMap;

use indexmap::IndexSet;

use super::Atom;

/// Insertion-ordered set of ground atoms with a stable position for each.
///
/// `entities` lists the constants that variables may be bound to during
/// grounding (scene objects, source tags); attribute constants such as
/// `boat` are deliberately left out.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactSet {
    facts: Vec<Atom>,
    index: HashMap<Atom, usize>,
    entities: IndexSet<String>,
}

impl FactSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a ground atom, returning its position and whether it was new.
    ///
    /// # Panics
    /// Panics if `atom` is not ground.
    pub fn insert(&mut self, atom: Atom) -> (usize, bool) {
        assert!(atom.is_ground(), "fact sets hold ground atoms only: {atom}");
        if let Some(&i) = self.index.get(&atom) {
            return (i, false);
        }
        let i = self.facts.len();
        self.index.insert(atom.clone(), i);
        self.facts.push(atom);
        (i, true)
    }

    pub fn add_entity(&mut self, constant: impl Into<String>) {
        self.entities.insert(constant.into());
    }

    pub fn position(&self, atom: &Atom) -> Option<usize> {
        self.index.get(atom).copied()
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.index.contains_key(atom)
    }

    pub fn get(&self, i: usize) -> Option<&Atom> {
        self.facts.get(i)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.facts.iter()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.facts
    }

    /// Constants that grounding may substitute for variables.
    ///
    /// Falls back to every constant in first-argument position when no
    /// entity was declared explicitly.
    pub fn entities(&self) -> IndexSet<String> {
        if !self.entities.is_empty() {
            return self.entities.clone();
        }
        self.facts
            .iter()
            .filter_map(|a| a.args.first().map(|t| t.name().to_string()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_stable_and_dense() {
        let mut fs = FactSet::new();
        assert_eq!(fs.insert(Atom::fact("on", &["obj1", "obj2"])), (0, true));
        assert_eq!(fs.insert(Atom::fact("type", &["obj1", "person"])), (1, true));
        assert_eq!(fs.insert(Atom::fact("on", &["obj1", "obj2"])), (0, false));
        assert_eq!(fs.len(), 2);
        for (i, a) in fs.iter().enumerate() {
            assert_eq!(fs.position(a), Some(i));
        }
    }

    #[test]
    fn entity_fallback() {
        let mut fs = FactSet::new();
        fs.insert(Atom::fact("type", &["obj1", "person"]));
        assert_eq!(fs.entities().into_iter().collect::<Vec<_>>(), ["obj1"]);
        fs.add_entity("obj7");
        assert_eq!(fs.entities().into_iter().collect::<Vec<_>>(), ["obj7"]);
    }

    #[test]
    #[should_panic]
    fn rejects_non_ground() {
        let mut fs = FactSet::new();
        fs.insert(Atom::new("on", vec![crate::logic::Term::var("X").unwrap()]).unwrap());
    }
}
